"""Prompt templates for QA generation, trace distillation, grading, node
classification, hop judging, and benchmark evaluation.

All renderers are pure functions of their inputs; rendering the same inputs
twice yields byte-identical strings.
"""

from __future__ import annotations

from .graph import KgPath, KnowledgeGraph, verbalize_path

QA_FORMAT_BLOCK = """Format:
<Question>
[Clinical Vignette]
</Question>
<Options>
A. [Option]
B. [Option]
C. [Option]
D. [Option]
</Options>
<Answer>:
[Correct Option Letter]
</Answer>"""


def render_qa_prompt(path: KgPath, graph: KnowledgeGraph) -> str:
    source = graph.name(path.source)
    target = graph.name(path.target)
    premises = "; ".join(verbalize_path(path, graph))
    return (
        "Create a medical examination question for advanced medical students "
        f"that tests the relationship between {source} and {target}. "
        f"The relationship is: {premises}. The question should:\n"
        "1. Be in multiple choice format (4 options)\n"
        "2. Require clinical reasoning along the relationship\n"
        "3. Include a brief clinical vignette\n"
        "4. Not directly mention the relationship in the question stem\n"
        "5. Have one clearly correct answer\n\n"
        f"{QA_FORMAT_BLOCK}"
    )


def _options_block(task) -> str:
    return "\n".join(f"{label}. {text}" for label, text in task.options)


def render_trace_prompt(task, path: KgPath, graph: KnowledgeGraph) -> str:
    premises = "; ".join(verbalize_path(path, graph))
    return (
        "Generate a detailed explanation for the question: "
        f"{task.vignette}\n{_options_block(task)}\n"
        f"Use the following context: {premises}. The explanation should be:\n"
        "1. Detailed and include all the steps leading to the answer.\n"
        "2. You are to use the provided context to explain the relationship "
        "between the concepts.\n"
        "3. Strictly do not mention that you are using a given context to "
        "generate the explanation."
    )


def render_grader_prompt(task, trace: str, path: KgPath, graph: KnowledgeGraph) -> str:
    premises = "; ".join(verbalize_path(path, graph))
    return (
        "You are a medical examiner. You are given a medical question along "
        "with an explanation and the answer. You have also been given a "
        "source context.\n"
        "1. Judge whether the question and answer are logically correct and "
        "medically accurate, and follow the source. If there is an "
        "explanation, also evaluate whether the explanation follows from the "
        "source to reach the correct answer.\n"
        '2. Respond with only "Yes" or "No".\n'
        'Format your response exactly like this: "Correct: [Yes/No]"\n\n'
        f"Question: {task.vignette}\n{_options_block(task)}\n\n"
        f"Explanation: {trace}\n\n"
        f"Answer: {task.answer}\n\n"
        f"Source Context: {premises}"
    )


def render_bench_prompt(task) -> str:
    """Evaluation prompt. Deliberately carries no path context."""
    return (
        "You are a medical expert presented with an MCQ question. "
        "Your final answer should be a single letter (A, B, C, or D).\n"
        "<Question>\n"
        f"{task.vignette}\n"
        "</Question>\n"
        "<Options>\n"
        f"{_options_block(task)}\n"
        "</Options>"
    )


def render_classifier_prompt(node_name: str, taxonomy) -> str:
    labels = "\n".join(f"- {c}" for c in taxonomy)
    return (
        "You are classifying medical concepts into taxonomy categories. "
        "Assign categories only when the concept has a strong affinity to "
        "them; otherwise answer None.\n"
        f"Concept: {node_name}\n"
        "Categories:\n"
        f"{labels}\n"
        "Respond with a comma-separated list of matching category names, "
        "or None."
    )


def render_hop_judge_prompt(premise: str, trace: str) -> str:
    return (
        "You are auditing a reasoning trace against a single factual "
        "relationship.\n"
        f"Relationship: {premise}\n"
        f"Reasoning trace: {trace}\n"
        "Is this relationship explicitly used in the reasoning? "
        'Format your response exactly like this: "Correct: [Yes/No]"'
    )
