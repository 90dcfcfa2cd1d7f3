import numpy as np
import pytest

from deptrigger.corpus import (
    attach_parses,
    load_embeddings,
    negative_instance,
    read_column_corpus,
    read_conllu_parses,
    replicate_per_entity,
)
from deptrigger.depgraph import TriggerConfig, annotate_corpus
from deptrigger.numerics import kernels as _kernels
from deptrigger.synthetic import bundle_dir


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_BACKENDS = ["python"] + (["cython"] if _kernels.compiled_kernels() is not None else [])


@pytest.fixture(params=_BACKENDS)
def crf_backend(request, monkeypatch):
    """Run a test once per available CRF kernel implementation."""
    impl = _kernels.python_kernels if request.param == "python" else _kernels.compiled_kernels()
    for name in ("forward", "backward", "viterbi"):
        monkeypatch.setattr(_kernels, name, getattr(impl, name))
    return request.param


class Synthetic:
    """The bundled toy corpus, annotated at max_hops=2."""

    def __init__(self):
        d = bundle_dir()
        train = read_column_corpus(d / "train.txt", "bio")
        self.train = attach_parses(train, read_conllu_parses(d / "train.conllu", train))
        self.test = read_column_corpus(d / "test.txt", "bio")
        self.embeddings = load_embeddings(d / "vectors.txt")
        self.instances = []
        for s, ann in zip(self.train, annotate_corpus(self.train, cfg=TriggerConfig(max_hops=2))):
            if s.mentions:
                self.instances.extend(replicate_per_entity(s, ann.trigger_sets))
            else:
                self.instances.append(negative_instance(s))
        self.config_path = d / "config.yaml"


@pytest.fixture(scope="session")
def synthetic():
    return Synthetic()


@pytest.fixture(scope="session")
def trained_matcher(synthetic):
    from deptrigger.matchnet import MatchConfig, train_matcher

    cfg = MatchConfig(hidden=16, attn=16, lr=0.01, batch_size=8, epochs=15, dropout=0.0, seed=13)
    matcher, _ = train_matcher(synthetic.instances, synthetic.embeddings, cfg)
    return matcher


# -- acceptance summary --------------------------------------------------------
# Tests tagged @pytest.mark.acceptance(n, title) are folded into one line per
# criterion at the end of the run.  A criterion fails if any of its tests fail
# and is reported as skipped only when all of them skipped.

_criteria = {}
_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _criteria[item.nodeid] = (mark.args[0], mark.args[1])


def pytest_runtest_logreport(report):
    if report.nodeid not in _criteria:
        return
    state = _outcomes.setdefault(report.nodeid, {"outcome": "passed", "details": [], "reason": ""})
    if report.failed:
        state["outcome"] = "failed"
    elif report.skipped and state["outcome"] != "failed":
        state["outcome"] = "skipped"
        if isinstance(report.longrepr, tuple):
            state["reason"] = report.longrepr[2].replace("Skipped: ", "")
    for key, value in report.user_properties:
        if key == "detail" and value not in state["details"]:
            state["details"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    by_number = {}
    for nodeid, (n, title) in _criteria.items():
        entry = by_number.setdefault(n, {"title": title, "states": []})
        if nodeid in _outcomes:
            entry["states"].append(_outcomes[nodeid])
    terminalreporter.section("acceptance criteria")
    for n in sorted(by_number):
        entry = by_number[n]
        states = entry["states"]
        if not states:
            continue
        outcomes = {s["outcome"] for s in states}
        if "failed" in outcomes:
            verdict = "FAIL"
        elif outcomes == {"skipped"}:
            verdict = "SKIP"
        else:
            verdict = "PASS"
        details = "; ".join(d for s in states for d in s["details"])
        if verdict == "SKIP":
            details = states[0]["reason"]
        terminalreporter.write_line(f"criterion {n}: {verdict}  {entry['title']}"
                                    + (f"  [{details}]" if details else ""))
