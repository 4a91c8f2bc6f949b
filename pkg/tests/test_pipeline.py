import pytest

from kgcurriculum.decontamination import NgramIndex, item_text
from kgcurriculum.errors import InvalidConfig, ProgressStall
from kgcurriculum import pipeline as pipe
from kgcurriculum.util import read_json, read_jsonl

from conftest import mock_backend_configs


def make_config(tmp_path, total=8, seed=7, **kw):
    return pipe.PipelineConfig(
        total_samples=total, max_hops=3, seed=seed,
        backends=mock_backend_configs(),
        output_dir=str(tmp_path / kw.pop("subdir", "out")), **kw)


def test_config_validation(tmp_path):
    with pytest.raises(InvalidConfig):
        make_config(tmp_path, total=0)
    with pytest.raises(InvalidConfig):
        pipe.PipelineConfig(total_samples=1, backends={})
    same = {"kind": "mock", "model_name": "g"}
    with pytest.raises(InvalidConfig):
        pipe.PipelineConfig(total_samples=1, backends={
            "generator": same, "trace": same,
            "grader1": same, "grader2": same})


def test_config_digest_ignores_output_dir(tmp_path):
    a = make_config(tmp_path, subdir="a")
    b = make_config(tmp_path, subdir="b")
    assert a.digest() == b.digest()


def test_run_end_to_end(tmp_path, graph):
    cfg = make_config(tmp_path)
    store, manifest = pipe.run(cfg, graph)
    assert manifest["item_count"] == 8
    assert len(store.records) == 8
    funnel = [manifest["funnel"][s] for s in pipe.FUNNEL_STAGES]
    assert funnel == sorted(funnel, reverse=True)  # monotone non-increasing
    assert manifest["config_digest"] == cfg.digest()
    assert manifest["seed"] == 7
    on_disk = read_jsonl(store.dataset_path)
    assert on_disk == store.records
    assert sum(manifest["per_hop_counts"].values()) == 8
    for rec in on_disk:
        assert rec["accepted"]
        assert len(rec["verdicts"]) == 2
        assert rec["hops"] == len(rec["path"])


def test_run_is_deterministic(tmp_path, graph):
    pipe.run(make_config(tmp_path, subdir="r1"), graph)
    pipe.run(make_config(tmp_path, subdir="r2"), graph)
    d1 = (tmp_path / "r1" / "dataset.jsonl").read_bytes()
    d2 = (tmp_path / "r2" / "dataset.jsonl").read_bytes()
    assert d1 == d2
    m1 = read_json(tmp_path / "r1" / "manifest.json")
    m2 = read_json(tmp_path / "r2" / "manifest.json")
    assert m1 == m2


def test_resume_matches_fresh_run(tmp_path, graph):
    pipe.run(make_config(tmp_path, total=4, subdir="part"), graph)
    pipe.run(make_config(tmp_path, total=9, subdir="part"), graph,
             resume=True)
    pipe.run(make_config(tmp_path, total=9, subdir="full"), graph)
    assert (tmp_path / "part" / "dataset.jsonl").read_bytes() == \
        (tmp_path / "full" / "dataset.jsonl").read_bytes()


def test_fresh_run_overwrites_stale_store(tmp_path, graph):
    cfg = make_config(tmp_path, total=3)
    pipe.run(cfg, graph)
    store, manifest = pipe.run(cfg, graph)  # no resume: starts over
    assert manifest["item_count"] == 3
    assert len(read_jsonl(store.dataset_path)) == 3


def test_progress_stall_writes_manifest(tmp_path, graph):
    backends = mock_backend_configs()
    backends["grader1"]["grader_decision"] = "No"
    cfg = pipe.PipelineConfig(
        total_samples=3, max_hops=3, seed=1, backends=backends,
        max_attempts_per_item=4, output_dir=str(tmp_path / "stall"))
    with pytest.raises(ProgressStall) as exc:
        pipe.run(cfg, graph)
    assert exc.value.tallies["attempted"] == 12
    manifest = read_json(tmp_path / "stall" / "manifest.json")
    assert manifest["item_count"] == 0
    assert manifest["rejections"].get("correctness-rejected", 0) > 0


def test_frequency_updates_only_on_acceptance(tmp_path, graph):
    backends = mock_backend_configs()
    backends["grader2"]["grader_decision"] = "No"
    cfg = pipe.PipelineConfig(
        total_samples=1, max_hops=2, seed=1, backends=backends,
        max_attempts_per_item=3, output_dir=str(tmp_path / "f"))
    with pytest.raises(ProgressStall):
        pipe.run(cfg, graph)
    assert not (tmp_path / "f" / "frequency.json").exists()


def test_decontamination_at_acceptance(tmp_path, graph):
    # first run unprotected to learn what the first item would be
    probe_cfg = make_config(tmp_path, total=1, subdir="probe")
    store, _ = pipe.run(probe_cfg, graph)
    first = store.records[0]
    from kgcurriculum.graph import path_from_record

    protected = {path_from_record(first["path"]).key()}
    index = NgramIndex.build([item_text(first)])
    cfg = make_config(tmp_path, total=2, subdir="guarded")
    store2, manifest = pipe.run(cfg, graph, protected_paths=protected,
                                protected_index=index)
    assert manifest["item_count"] == 2
    keys = {path_from_record(r["path"]).key() for r in store2.records}
    assert protected.isdisjoint(keys)
    rejected = manifest["rejections"]
    assert rejected.get("contaminated-path", 0) + \
        rejected.get("contaminated-ngram", 0) >= 1


def test_sft_record_shape():
    record = {
        "item_id": "item-000001",
        "hops": 2,
        "task": {
            "vignette": "What now?",
            "options": [["A", "x"], ["B", "y"], ["C", "z"], ["D", "w"]],
            "answer": "C",
        },
        "trace": {"text": "think hard", "model": "m", "token_count": 2},
    }
    sft = pipe.sft_record(record)
    assistant = sft["messages"][1]["content"]
    assert assistant.count(pipe.THINK_OPEN) == 1
    assert assistant.count(pipe.THINK_CLOSE) == 1
    assert assistant.endswith("Final Answer: C")
    assert sft["loss_mask"] == "assistant"
    user, trace, answer = pipe.parse_sft_record(sft)
    assert trace == "think hard"
    assert answer == "C"
    assert user.startswith("What now?")
    assert "A. x" in user


def test_export_sft_round_trip(tmp_path, graph):
    store, _ = pipe.run(make_config(tmp_path, total=5), graph)
    out = tmp_path / "sft.jsonl"
    count = pipe.export_sft(store.records, out)
    assert count == 5
    lines = read_jsonl(out)
    assert lines[0]["sft_manifest"]["item_count"] == 5
    for rec, src in zip(lines[1:], store.records):
        user, trace, answer = pipe.parse_sft_record(rec)
        assert trace == src["trace"]["text"]
        assert answer == src["task"]["answer"]
        assert rec["item_id"] == src["item_id"]


def test_multi_worker_run(tmp_path, graph):
    cfg = make_config(tmp_path, total=12, workers=4, subdir="pool")
    store, manifest = pipe.run(cfg, graph)
    assert manifest["item_count"] == 12
    assert len(read_jsonl(store.dataset_path)) == 12
    funnel = [manifest["funnel"][s] for s in pipe.FUNNEL_STAGES]
    assert funnel == sorted(funnel, reverse=True)
    ids = [r["item_id"] for r in store.records]
    assert len(set(ids)) == 12


def test_multi_worker_stall(tmp_path, graph):
    backends = mock_backend_configs()
    backends["grader1"]["grader_decision"] = "No"
    cfg = pipe.PipelineConfig(
        total_samples=3, max_hops=2, seed=1, backends=backends, workers=3,
        max_attempts_per_item=4, output_dir=str(tmp_path / "poolstall"))
    with pytest.raises(ProgressStall):
        pipe.run(cfg, graph)


def test_hop_subset():
    records = [{"hops": h, "i": i} for i, h in enumerate([1, 2, 3, 2, 1])]
    subset = pipe.hop_subset(records, {2})
    assert [r["i"] for r in subset] == [1, 3]
    assert pipe.hop_subset(records, {1, 2, 3}) == records


def test_hop_distribution_uniform(tmp_path):
    # unconstrained run over {1..3}: accepted-hop counts are uniform
    from scipy import stats as sstats

    from conftest import ring_graph

    graph = ring_graph(n=30, offsets=(1, 2, 3))
    cfg = pipe.PipelineConfig(
        total_samples=3000, max_hops=3, seed=11,
        backends=mock_backend_configs(),
        output_dir=str(tmp_path / "uniform"))
    _, manifest = pipe.run(cfg, graph)
    counts = [manifest["per_hop_counts"][str(h)] for h in (1, 2, 3)]
    assert sum(counts) == 3000
    chi = sstats.chisquare(counts)
    assert chi.pvalue > 0.001
