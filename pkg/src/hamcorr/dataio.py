"""Datasets of pulse experiments: schema, synthetic generation, split, export.

Dataset and fit-result files are JSON documents; plot-ready exports are CSV.
Frequencies are stored in rad/ns. Files tagged with ``"units": "GHz"`` or
``"Hz"`` are converted exactly once, when they are loaded.
"""
import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DatasetParseError, GenerationError, NotFoundError
from .hamiltonian import DEFAULT_FRAME, CorrectionSet, DeviceParams, ModelContext
from .model import STATE_LABELS, PreparedModel, simulate_points
from .operators import basis_index
from .pulses import DEFAULT_RISEFALL_DT, DEFAULT_SIGMA_DT, duration_ladder
from .training import FitConfig, FitResult

DATASET_FORMAT = "hamcorr.dataset"
KNOWN_EDGE_CONVENTIONS = ("lifted_gaussian",)
FREQUENCY_FIELDS = ("omega1", "omega2", "delta1", "delta2", "j12", "Omega1", "Omega2")

TARGET_AMPLITUDES = (0.0, 0.01, 0.02, 0.03, 0.04)
CONTROL_AMPLITUDES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
LONG_PAIR = (0.0, 0.1)
# rows missing from the published loss table
REDUCED_TABLE_OMITS = ((0.03, 0.3), (0.04, 0.3))


@dataclass(frozen=True)
class DataPoint:
    amplitude_target: float
    amplitude_control: float
    total_duration_dt: int
    initial_state: str
    probs: tuple
    shots: int = None
    normalized: bool = False

    def __post_init__(self):
        if self.initial_state not in STATE_LABELS:
            raise DataError(f"initial_state must be one of {STATE_LABELS}, "
                            f"got {self.initial_state!r}")
        probs = tuple(float(x) for x in self.probs)
        if len(probs) != 4:
            raise DataError("probs must hold four values (00, 01, 10, 11)")
        if any(not (0.0 <= x <= 1.0) for x in probs):
            raise DataError(f"probabilities outside [0, 1]: {probs}")
        if self.normalized and abs(sum(probs) - 1.0) > 1e-6:
            raise DataError(f"normalized probabilities sum to {sum(probs)}")
        object.__setattr__(self, "probs", probs)

    @property
    def pair(self):
        return (self.amplitude_target, self.amplitude_control)


@dataclass
class Dataset:
    device_params: DeviceParams
    drive_freq_q1: float
    drive_freq_q2: float
    points: list
    provenance: dict
    edge_convention: dict = field(default_factory=lambda: {
        "name": "lifted_gaussian", "risefall_dt": DEFAULT_RISEFALL_DT,
        "sigma_dt": DEFAULT_SIGMA_DT})

    def pairs(self):
        seen = []
        for p in self.points:
            if not any(_same_pair(p.pair, q) for q in seen):
                seen.append(p.pair)
        return seen

    def points_for(self, pair):
        pts = [p for p in self.points if _same_pair(p.pair, pair)]
        if not pts:
            raise NotFoundError(f"amplitude pair {tuple(pair)} not in dataset")
        return pts

    def prepared_model(self, context, active=(False, False, True), modulation_freq=None,
                       complex_params=False, chunk_size=40):
        return PreparedModel(
            context, self.drive_freq_q1, self.drive_freq_q2,
            risefall_dt=self.edge_convention.get("risefall_dt", DEFAULT_RISEFALL_DT),
            sigma_dt=self.edge_convention.get("sigma_dt", DEFAULT_SIGMA_DT),
            active=tuple(active), modulation_freq=modulation_freq,
            complex_params=complex_params, chunk_size=chunk_size,
        )


def _same_pair(a, b):
    return math.isclose(a[0], b[0], abs_tol=1e-12) and math.isclose(a[1], b[1], abs_tol=1e-12)


# --- the experiment grid ----------------------------------------------------


@dataclass(frozen=True)
class GridPair:
    amplitude_target: float
    amplitude_control: float
    durations: dict  # initial-state label -> tuple of total durations (dt)

    @property
    def pair(self):
        return (self.amplitude_target, self.amplitude_control)

    def n_points(self):
        return sum(len(v) for v in self.durations.values())


def standard_grid():
    """The 30 amplitude pairs with their duration ladders per initial state."""
    ladder20 = tuple(duration_ladder(20))
    ladder30 = tuple(duration_ladder(30))
    longest5 = ladder20[15:]
    grid = []
    for a1 in TARGET_AMPLITUDES:
        for a2 in CONTROL_AMPLITUDES:
            main = ladder30 if _same_pair((a1, a2), LONG_PAIR) else ladder20
            grid.append(GridPair(a1, a2, {"00": main, "10": main,
                                          "01": longest5, "11": longest5}))
    return grid


def grid_points(grid):
    """Unlabelled points (probabilities zero) for every grid entry."""
    out = []
    for entry in grid:
        for state in STATE_LABELS:
            for dur in entry.durations.get(state, ()):
                out.append((entry.amplitude_target, entry.amplitude_control, int(dur), state))
    return out


# --- synthetic data -----------------------------------------------------------


def corrections_digest(corrections):
    payload = {
        "matrices": {k: [np.real(m).tolist(), np.imag(m).tolist()]
                     for k, m in corrections.matrices.items()},
        "active": list(corrections.active),
        "modulation_freq": corrections.modulation_freq,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def generate_synthetic(params, planted, grid=None, shots=None, seed=0, normalized=False,
                       drive_freqs=None, frame=DEFAULT_FRAME, edge_convention=None, workers=1):
    """Simulate every grid point under the model plus ``planted`` corrections.

    Without ``shots`` the stored probabilities are the simulator output. With
    ``shots`` they are multinomial frequencies over {00, 01, 10, 11, leaked},
    either divided by the shot count (leakage stays out of the 4-vector) or
    renormalised over the four computational outcomes when ``normalized``.
    ``params`` may be a ready ``ModelContext`` to control frame and tolerances.
    """
    if isinstance(params, ModelContext):
        context, params = params, params.params
    else:
        context = ModelContext(params, frame=frame)
    grid = standard_grid() if grid is None else grid
    if drive_freqs is None:
        drive_freqs = (params.omega2, params.omega2)
    edge = dict(edge_convention or {"name": "lifted_gaussian",
                                    "risefall_dt": DEFAULT_RISEFALL_DT,
                                    "sigma_dt": DEFAULT_SIGMA_DT})
    for name, m in planted.matrices.items():
        if not np.allclose(m, m.conj().T, atol=1e-14) or np.any(np.diag(m) != 0):
            raise GenerationError(f"planted {name} must be Hermitian with zero diagonal")

    dataset = Dataset(params, float(drive_freqs[0]), float(drive_freqs[1]), [], {}, edge)
    jobs = [(dataset, context, planted, entry, normalized) for entry in grid]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            simulated = list(pool.map(_simulate_entry, jobs))
    else:
        simulated = [_simulate_entry(job) for job in jobs]
    # shot noise is drawn afterwards in grid order, so workers do not change the data
    rng = np.random.default_rng(seed)
    for stub, probs in simulated:
        for pt, pr in zip(stub, probs):
            if shots is not None:
                pr = _sample(rng, pr, shots, normalized)
            pr = np.clip(pr, 0.0, 1.0)
            dataset.points.append(DataPoint(pt.amplitude_target, pt.amplitude_control,
                                            pt.total_duration_dt, pt.initial_state,
                                            tuple(float(x) for x in pr), shots, normalized))
    dataset.provenance = {
        "kind": "synthetic", "seed": int(seed), "shots": shots,
        "planted_digest": corrections_digest(planted), "frame": context.frame,
        "rel_tol": context.rel_tol, "abs_tol": context.abs_tol,
    }
    return dataset


def _simulate_entry(job):
    dataset, context, planted, entry, normalized = job
    stub = [DataPoint(a1, a2, dur, state, (0.25,) * 4, None, normalized)
            for a1, a2, dur, state in grid_points([entry])]
    model = dataset.prepared_model(context, active=planted.active,
                                   modulation_freq=planted.modulation_freq,
                                   chunk_size=max(1, len(stub)))
    try:
        _, probs = simulate_points(model, planted, stub)
    except Exception as exc:
        raise GenerationError(f"simulation failed for pair {entry.pair}: {exc}") from exc
    return stub, probs


def _sample(rng, probs, shots, normalized):
    p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    if normalized:
        p = p / p.sum()
    five = np.append(p, max(0.0, 1.0 - p.sum()))
    counts = rng.multinomial(int(shots), five / five.sum())
    if normalized:
        kept = counts[:4].sum()
        return counts[:4] / kept if kept else np.full(4, 0.25)
    return counts[:4] / shots


# --- train / validation split -------------------------------------------------


def split(dataset, pair, n_train=10, train_states=("00", "10")):
    """Shortest ``n_train`` durations of each training state train; the rest validate."""
    points = dataset.points_for(pair)
    train_ids = set()
    for state in train_states:
        ids = sorted((i for i, p in enumerate(points) if p.initial_state == state),
                     key=lambda i: points[i].total_duration_dt)
        if len(ids) < n_train:
            raise DataError(f"pair {tuple(pair)} has {len(ids)} |{state}> points, "
                            f"need at least {n_train} for training")
        train_ids.update(ids[:n_train])
    train = [p for i, p in enumerate(points) if i in train_ids]
    validation = [p for i, p in enumerate(points) if i not in train_ids]
    return train, validation


# --- file formats -------------------------------------------------------------


def atomic_write_text(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _unit_factor(units):
    factors = {"rad/ns": 1.0, "ghz": 2 * math.pi, "hz": 2 * math.pi * 1e-9}
    key = str(units).strip().lower()
    if key not in factors:
        raise DatasetParseError(f"unknown frequency units {units!r}")
    return factors[key]


def device_params_to_dict(params):
    out = {"units": "rad/ns"}
    out.update(asdict(params))
    return out


def device_params_from_dict(data, where="device_params"):
    if not isinstance(data, dict):
        raise DatasetParseError(f"{where}: expected an object")
    factor = _unit_factor(data.get("units", "rad/ns"))
    kwargs = {}
    for name in FREQUENCY_FIELDS:
        if name not in data:
            raise DatasetParseError(f"{where}: missing field {name!r}")
        kwargs[name] = _number(data[name], f"{where}.{name}") * factor
    if "levels" in data:
        kwargs["levels"] = int(data["levels"])
    if "dt_ns" in data:
        kwargs["dt_ns"] = _number(data["dt_ns"], f"{where}.dt_ns")
    try:
        return DeviceParams(**kwargs)
    except Exception as exc:
        raise DatasetParseError(f"{where}: {exc}") from exc


def load_device_params(path):
    """Device parameter file: JSON object with a ``units`` tag (rad/ns, GHz, Hz)."""
    data = _read_json(path)
    if isinstance(data, dict) and "device_params" in data:
        data = data["device_params"]
    return device_params_from_dict(data, where=str(path))


def _number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DatasetParseError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def dataset_to_dict(dataset):
    return {
        "format": DATASET_FORMAT,
        "version": 1,
        "device_params": device_params_to_dict(dataset.device_params),
        "drive_freqs": {"units": "rad/ns", "q1": dataset.drive_freq_q1,
                        "q2": dataset.drive_freq_q2},
        "edge_convention": dataset.edge_convention,
        "provenance": dataset.provenance,
        "points": [
            {"a1": p.amplitude_target, "a2": p.amplitude_control,
             "duration_dt": p.total_duration_dt, "initial_state": p.initial_state,
             "probs": list(p.probs), "shots": p.shots, "normalized": p.normalized}
            for p in dataset.points
        ],
    }


def dataset_from_dict(data):
    if not isinstance(data, dict):
        raise DatasetParseError("dataset: expected a JSON object")
    for key in ("device_params", "drive_freqs", "provenance", "points"):
        if key not in data:
            raise DatasetParseError(f"dataset: missing field {key!r}")
    params = device_params_from_dict(data["device_params"])
    drives = data["drive_freqs"]
    if not isinstance(drives, dict) or "q1" not in drives or "q2" not in drives:
        raise DatasetParseError("drive_freqs: expected an object with 'q1' and 'q2'")
    factor = _unit_factor(drives.get("units", "rad/ns"))
    q1 = _number(drives["q1"], "drive_freqs.q1") * factor
    q2 = _number(drives["q2"], "drive_freqs.q2") * factor

    edge = data.get("edge_convention") or {"name": "lifted_gaussian"}
    if isinstance(edge, str):
        edge = {"name": edge}
    if edge.get("name") not in KNOWN_EDGE_CONVENTIONS:
        warnings.warn(f"unknown edge convention {edge.get('name')!r}; "
                      "simulating with lifted Gaussian edges", stacklevel=2)
    edge.setdefault("risefall_dt", DEFAULT_RISEFALL_DT)
    edge.setdefault("sigma_dt", DEFAULT_SIGMA_DT)

    provenance = data["provenance"]
    if not isinstance(provenance, dict) or "kind" not in provenance:
        raise DatasetParseError("provenance: expected an object with a 'kind'")
    if not isinstance(data["points"], list):
        raise DatasetParseError("points: expected a list")
    points = [_point_from_dict(raw, i) for i, raw in enumerate(data["points"])]
    return Dataset(params, q1, q2, points, provenance, edge)


def _point_from_dict(raw, index):
    where = f"points[{index}]"
    if not isinstance(raw, dict):
        raise DatasetParseError(f"{where}: expected an object")
    for key in ("a1", "a2", "duration_dt", "initial_state", "probs"):
        if key not in raw:
            raise DatasetParseError(f"{where}: missing field {key!r}")
    probs = raw["probs"]
    if not isinstance(probs, list) or len(probs) != 4:
        raise DatasetParseError(f"{where}.probs: expected a list of four numbers")
    shots = raw.get("shots")
    if shots is not None and (isinstance(shots, bool) or not isinstance(shots, int)):
        raise DatasetParseError(f"{where}.shots: expected an integer or null")
    duration = raw["duration_dt"]
    if isinstance(duration, bool) or not isinstance(duration, int) or duration <= 0:
        raise DatasetParseError(f"{where}.duration_dt: expected a positive integer")
    try:
        return DataPoint(
            _number(raw["a1"], f"{where}.a1"), _number(raw["a2"], f"{where}.a2"),
            duration, str(raw["initial_state"]),
            tuple(_number(x, f"{where}.probs") for x in probs),
            shots, bool(raw.get("normalized", False)),
        )
    except DataError as exc:
        if isinstance(exc, DatasetParseError):
            raise
        raise DatasetParseError(f"{where}: {exc}") from exc


def save_dataset(dataset, path):
    atomic_write_text(path, json.dumps(dataset_to_dict(dataset), indent=1) + "\n")


def load_dataset(path):
    return dataset_from_dict(_read_json(path))


# --- CSV exports ----------------------------------------------------------------


def _csv_text(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _grid_rows(values):
    n = values.shape[0]
    rows = [["row/col"] + [str(j + 1) for j in range(n)]]
    for i in range(n):
        rows.append([str(i + 1)] + [repr(float(v)) for v in values[i]])
    return rows


def export_heatmap(matrix, path):
    """Real parts as a CSV grid with 1-based headers; imaginary parts alongside if any.

    Returns the list of files written.
    """
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DataError(f"heatmap needs a square matrix, got shape {m.shape}")
    path = Path(path)
    written = [path]
    atomic_write_text(path, _csv_text(_grid_rows(np.real(m))))
    if np.any(np.imag(m) != 0):
        imag_path = path.with_name(f"{path.stem}_imag{path.suffix}")
        atomic_write_text(imag_path, _csv_text(_grid_rows(np.imag(m))))
        written.append(imag_path)
    return written


@dataclass
class PairEvaluation:
    amplitude_target: float
    amplitude_control: float
    loss_uncorrected: float
    loss_corrected: float
    n_points: int = 0
    d2: np.ndarray = None


def d2_trend_elements(d2, levels):
    """<00|D2|01> and <10|D2|11> of a correction matrix."""
    d2 = np.asarray(d2)
    i00, i01 = basis_index(0, 0, levels), basis_index(0, 1, levels)
    i10, i11 = basis_index(1, 0, levels), basis_index(1, 1, levels)
    return d2[i00, i01], d2[i10, i11]


def export_loss_table(evaluations, path, trend_path=None, reduced_table=False, levels=3):
    """Per-pair average losses, plus optional D2 trend series for each pair."""
    if not evaluations:
        raise DataError("no evaluated pairs to export")
    rows = [["T_amp", "C_amp", "loss_uncorrected", "loss_corrected"]]
    kept = [e for e in evaluations
            if not (reduced_table and any(_same_pair((e.amplitude_target, e.amplitude_control), o)
                                       for o in REDUCED_TABLE_OMITS))]
    for e in kept:
        rows.append([repr(e.amplitude_target), repr(e.amplitude_control),
                     repr(float(e.loss_uncorrected)), repr(float(e.loss_corrected))])
    atomic_write_text(path, _csv_text(rows))
    written = [Path(path)]
    if trend_path is not None:
        written.append(export_trends(kept, trend_path, levels))
    return written


def export_trends(evaluations, path, levels=3):
    rows = [["T_amp", "C_amp", "d2_00_01", "d2_10_11"]]
    for e in evaluations:
        if e.d2 is None:
            continue
        a, b = d2_trend_elements(e.d2, levels)
        rows.append([repr(e.amplitude_target), repr(e.amplitude_control),
                     repr(float(np.real(a))), repr(float(np.real(b)))])
    atomic_write_text(path, _csv_text(rows))
    return Path(path)


# --- fit results ----------------------------------------------------------------

FIT_FORMAT = "hamcorr.fit"


def content_digest(payload):
    """sha256 of a JSON document with its ``metadata`` and ``digest`` fields left out."""
    body = {k: v for k, v in payload.items() if k not in ("metadata", "digest")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def dataset_digest(dataset):
    return content_digest(dataset_to_dict(dataset))


def _matrix_to_dict(m):
    return {"real": np.real(m).tolist(), "imag": np.imag(m).tolist()}


def _matrix_from_dict(data, where):
    try:
        m = np.asarray(data["real"], dtype=float) + 1j * np.asarray(data["imag"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetParseError(f"{where}: expected real/imag grids ({exc})") from exc
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DatasetParseError(f"{where}: matrix must be square")
    return m


def corrections_to_dict(corrections):
    return {
        "active": [name for name, a in zip(("M", "D1", "D2"), corrections.active) if a],
        "modulation_freq": corrections.modulation_freq,
        "matrices": {k: _matrix_to_dict(m) for k, m in corrections.matrices.items()},
    }


def corrections_from_dict(data, where="corrections"):
    if not isinstance(data, dict) or "matrices" not in data:
        raise DatasetParseError(f"{where}: expected an object with 'matrices'")
    mats = data["matrices"]
    names = ("M", "D1", "D2")
    present = [n for n in names if n in mats]
    if not present:
        raise DatasetParseError(f"{where}.matrices: none of M, D1, D2 given")
    parsed = {n: _matrix_from_dict(mats[n], f"{where}.matrices.{n}") for n in present}
    dim = next(iter(parsed.values())).shape[0]
    if any(m.shape != (dim, dim) for m in parsed.values()):
        raise DatasetParseError(f"{where}: matrices differ in size")
    active = data.get("active", present)
    flags = tuple(n in active for n in names)
    blocks = [parsed.get(n, np.zeros((dim, dim), dtype=complex)) for n in names]
    return CorrectionSet(*blocks, active=flags, modulation_freq=data.get("modulation_freq"))


def fit_result_to_dict(result):
    return {
        "pair": list(result.pair) if result.pair is not None else None,
        "config": result.config.to_dict() if result.config is not None else None,
        "n_points": result.n_points,
        "param_vector": np.asarray(result.params, dtype=float).tolist(),
        "corrections": corrections_to_dict(result.corrections),
        "final_loss": float(result.final_loss),
        "average_loss": float(result.average_loss),
        "loss_history": [float(x) for x in result.loss_history],
        "iterations_used": int(result.iterations_used),
    }


def fit_result_from_dict(data, where="results"):
    try:
        config = FitConfig.from_dict(data["config"]) if data.get("config") else None
        history = [float(x) for x in data["loss_history"]]
        return FitResult(
            corrections=corrections_from_dict(data["corrections"], f"{where}.corrections"),
            params=np.asarray(data["param_vector"], dtype=float),
            final_loss=float(data["final_loss"]), loss_history=history,
            iterations_used=int(data["iterations_used"]), wall_time_s=0.0, config=config,
            n_points=int(data.get("n_points", 0)),
            pair=tuple(data["pair"]) if data.get("pair") is not None else None,
        )
    except KeyError as exc:
        raise DatasetParseError(f"{where}: missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise DatasetParseError(f"{where}: {exc}") from exc


def fit_results_to_dict(results, info=None):
    """Result document. Timings and timestamps live under ``metadata`` only."""
    payload = {"format": FIT_FORMAT, "version": 1}
    payload.update(info or {})
    payload["results"] = [fit_result_to_dict(r) for r in results]
    payload["digest"] = content_digest(payload)
    payload["metadata"] = {
        "wall_time_s": [float(r.wall_time_s) for r in results],
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    return payload


def save_fit_results(results, path, info=None):
    atomic_write_text(path, json.dumps(fit_results_to_dict(results, info), indent=1) + "\n")


def load_fit_results(path):
    """Returns ``(results, document)``; ``document`` holds the remaining fields."""
    data = _read_json(path)
    if not isinstance(data, dict) or data.get("format") != FIT_FORMAT:
        raise DatasetParseError(f"{path}: not a fit result file")
    if not isinstance(data.get("results"), list):
        raise DatasetParseError(f"{path}: 'results' must be a list")
    results = [fit_result_from_dict(r, f"results[{i}]") for i, r in enumerate(data["results"])]
    times = (data.get("metadata") or {}).get("wall_time_s") or []
    for r, t in zip(results, times):
        r.wall_time_s = float(t)
    return results, data
