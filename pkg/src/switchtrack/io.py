"""Problem documents, weight files and their compatibility hashes."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .basis import basis_from_table
from .errors import IncompatibleWeightsError, ProblemValidationError
from .model import CostSpec, ModeDynamics, Omega, ReferenceModel, SwitchedTrackingProblem
from .snac import CostateNetwork, TrainConfig
from .transform import TransformedGrid

SCHEMA_VERSION = 1
WEIGHTS_FORMAT = "switchtrack-weights"

# keys that define the trained object; the train section only affects how it was fitted
PROBLEM_KEYS = ("modes", "sequence", "t0", "tf", "S", "Qbar", "Rbar", "reference", "omega",
                "dthat", "basis_degree", "terminal_factor")
REQUIRED_KEYS = ("modes", "sequence", "t0", "tf", "S", "Qbar", "Rbar", "reference", "omega", "dthat")


def _digest(obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class LoadedConfig:
    document: dict
    problem: SwitchedTrackingProblem
    grid: TransformedGrid
    train: TrainConfig
    x0: np.ndarray = None

    @property
    def config_hash(self):
        return _digest(self.document)

    @property
    def problem_hash(self):
        return _digest({k: self.document.get(k) for k in PROBLEM_KEYS})


def _mode_from_doc(spec, i):
    kind = spec.get("type")
    if kind == "linear":
        if "A" not in spec or "B" not in spec:
            raise ProblemValidationError(f"mode {i}: linear mode needs A and B")
        return ModeDynamics.linear(spec["A"], spec["B"])
    if kind == "vanderpol":
        return ModeDynamics.vanderpol()
    raise ProblemValidationError(f"mode {i}: unknown type {kind!r}")


def _reference_from_doc(spec):
    kind = spec.get("type")
    if kind == "sinusoid":
        return ReferenceModel.sinusoid(spec.get("r0", (0.0, 0.0)))
    if kind == "constant":
        r0 = np.asarray(spec["r0"], dtype=float)
        return ReferenceModel.custom_ode(lambda t: np.zeros(r0.size), r0, (-1e3, 1e3), steps=2)
    raise ProblemValidationError(f"unknown reference type {kind!r}")


def problem_from_document(doc):
    """Build ``(problem, grid, train_config, x0)`` from a parsed document."""
    missing = [k for k in REQUIRED_KEYS if k not in doc]
    if missing:
        raise ProblemValidationError(f"problem document is missing keys: {', '.join(missing)}")
    modes = tuple(_mode_from_doc(m, i + 1) for i, m in enumerate(doc["modes"]))
    om = doc["omega"]
    omega = Omega(om["state_lo"], om["state_hi"], om.get("switch_margin"))
    mode_refs = None
    if doc.get("mode_references"):
        mode_refs = {int(v): _reference_from_doc(r) for v, r in doc["mode_references"].items()}
    try:
        p = SwitchedTrackingProblem(
            modes, tuple(int(v) for v in doc["sequence"]), float(doc["t0"]), float(doc["tf"]),
            CostSpec(doc["S"], doc["Qbar"], doc["Rbar"]), _reference_from_doc(doc["reference"]), omega,
            float(doc.get("terminal_factor", 1.0)), mode_refs)
    except (TypeError, KeyError) as exc:
        raise ProblemValidationError(f"malformed problem document: {exc}") from exc
    grid = TransformedGrid(p.K, float(doc["dthat"]))
    tr = doc.get("train", {})
    cfg = TrainConfig(eta=int(tr.get("eta", 1000)), gamma=float(tr.get("gamma", 1e-6)),
                      max_inner=int(tr.get("max_inner", 50)), seed=int(tr.get("seed", 0)),
                      ridge=tr.get("ridge"), degree=int(doc.get("basis_degree", 3)),
                      resample=bool(tr.get("resample", True)))
    x0 = np.asarray(doc["x0"], dtype=float) if "x0" in doc else None
    return p, grid, cfg, x0


def load_config(path_or_doc):
    if isinstance(path_or_doc, dict):
        doc = path_or_doc
    else:
        with open(path_or_doc) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ProblemValidationError(f"problem document is not valid JSON: {exc}") from exc
    p, grid, cfg, x0 = problem_from_document(doc)
    return LoadedConfig(doc, p, grid, cfg, x0)


def bundled_document(name):
    """A copy of one of the bundled problem documents (``vdp`` or ``lq_two_mode``)."""
    text = resources.files("switchtrack").joinpath("data", f"{name}.json").read_text()
    return json.loads(text)


def header_line(seed, config_hash):
    return f"seed={seed} config_hash={config_hash}"


def _num(v):
    return repr(float(v))


def write_weights(path, net, loaded, seed):
    """Weight file: a JSON header, then one step's matrix per line."""
    p = loaded.problem
    header = {
        "format": WEIGHTS_FORMAT,
        "schema_version": SCHEMA_VERSION,
        "n": p.n, "m": p.m, "K": p.K,
        "degree": int(net.basis.degree),
        "m_lambda": int(net.basis.m_lambda),
        "Nprime": int(net.grid.Nprime),
        "dthat": float(net.grid.dthat),
        "terminal_factor": float(p.terminal_factor),
        "seed": int(seed),
        "config_hash": loaded.config_hash,
        "problem_hash": loaded.problem_hash,
        "basis": net.basis.exponents.tolist(),
    }
    with open(path, "w") as fh:
        fh.write("{\n")
        for key, value in header.items():
            fh.write(f" {json.dumps(key)}: {json.dumps(value, separators=(',', ':'))},\n")
        fh.write(' "weights": [\n')
        N = net.weights.shape[0]
        for k in range(N):
            rows = ",".join("[" + ",".join(_num(v) for v in row) + "]" for row in net.weights[k])
            fh.write(f"  [{rows}]" + (",\n" if k < N - 1 else "\n"))
        fh.write(" ]\n}\n")


def read_weights(path, loaded=None):
    """Load a network; with ``loaded`` given, check it fits that problem."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != WEIGHTS_FORMAT:
        raise IncompatibleWeightsError(f"{path} is not a weight file")
    basis = basis_from_table(doc["basis"])
    grid = TransformedGrid(int(doc["K"]), float(doc["dthat"]))
    W = np.asarray(doc["weights"], dtype=float).reshape(int(doc["Nprime"]), int(doc["m_lambda"]), int(doc["n"]))
    if loaded is not None:
        p = loaded.problem
        expected = {"n": p.n, "m": p.m, "K": p.K, "Nprime": loaded.grid.Nprime,
                    "degree": loaded.train.degree, "problem_hash": loaded.problem_hash}
        diffs = [f"{k}: weights {doc.get(k)!r} vs config {v!r}" for k, v in expected.items() if doc.get(k) != v]
        if diffs:
            raise IncompatibleWeightsError("weights do not match the problem (hash mismatch): " + "; ".join(diffs))
    net = CostateNetwork(basis, grid, int(doc["n"]), W, np.ones(W.shape[0], dtype=bool))
    return net, doc


def write_history(path, report, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["khat", "iteration", "frobenius_change", "residual_rms"])
        for k, it, change, res in report.history:
            w.writerow([k, it, _num(change), _num(res)])


def write_step_changes(path, net, header_comment=None):
    """``khat,step_change``: Frobenius norm of ``W_k - W_{k+1}``."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["khat", "step_change", "weight_norm"])
        norms = np.linalg.norm(net.weights.reshape(net.weights.shape[0], -1), axis=1)
        changes = net.step_changes()
        for k, c in enumerate(changes):
            w.writerow([k, _num(c), _num(norms[k])])


def write_json(path, obj, header_comment=None):
    """JSON with the header comment carried as a ``_header`` field."""
    out = {"_header": header_comment} if header_comment else {}
    out.update(obj)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")
