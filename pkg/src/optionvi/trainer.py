"""Training loop: schedules, per-trajectory updates, metrics, checkpoints.

One iteration processes a single trajectory: run the posterior, sample an
option sequence with exploration, build the objective, and take one Adam step
per network on the pathwise-plus-score surrogate. Epsilon decays linearly;
the option-likelihood weight switches from a small warmup value to 1.0 at a
fixed epoch. Everything is deterministic given (data, config, seed), and
checkpoints capture enough state (parameters, Adam moments, RNG, baseline)
that a resumed run is bitwise identical to an uninterrupted one.

Checkpoint format: an 8-byte magic, a little-endian uint64 manifest length, a
canonical JSON manifest (sorted keys), then a flat little-endian float64
payload holding, for each store in manifest order and each parameter in
declaration order, the parameter values followed by its two Adam moments.
"""

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import netstack as ns
from .diffcore import adam_step, backward, bernoulli_log_prob
from .errors import CheckpointError, ConfigError, InputError, NumericError
from .pretrain import SegmentEncoder, run_pretraining, warm_start_posterior
from .tvi import LossWeights, clamped_zeta, greedy_zeta, objective, sample_zeta

CHECKPOINT_MAGIC = b"OVCKPT01"
CHECKPOINT_VERSION = 1
METRICS_HEADER = "epoch,mean_j,mean_log_pi,mean_log_eta,mean_neg_log_q,epsilon,w_eta"
PRETRAIN_METRICS_HEADER = "epoch,loss,recon_log_prob,kl"

PRESETS = {"desk": {"layers": 2, "hidden": 64}, "paper": {"layers": 8, "hidden": 128}}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 50
    seed: int = 0
    d_z: int = 64
    layers: int = 2
    hidden: int = 64
    epsilon_initial: float = 0.3
    epsilon_final: float = 0.05
    epsilon_decay_epochs: int = 30
    w_eta_initial: float = 0.01
    w_eta_final: float = 1.0
    w_eta_switch_epoch: int = 5
    w_ent: float = 0.01
    pretrain_epochs: int = 20
    pretrain_lr: float = 1e-3
    pretrain_beta: float = 0.01
    segment_length_min: int = 5
    segment_length_max: int = 10
    baseline_decay: float = 0.99
    grad_clip: float = 10.0
    q_warm_start: bool = False
    bootstrap_epochs: int = 20
    bootstrap_weight: float = 5.0
    term_prior: float = 0.03

    @classmethod
    def with_preset(cls, name: str, **overrides) -> "TrainConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        merged = dict(PRESETS[name])
        merged.update(overrides)
        return cls(**merged)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        preset = raw.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            base = dict(PRESETS[preset])
            base.update(raw)
            raw = base
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown train config keys: {unknown}")
        return cls(**raw)

    def validate(self) -> "TrainConfig":
        checks = [
            (self.lr > 0, "lr must be positive"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.d_z >= 1, "d_z must be >= 1"),
            (self.layers >= 1, "layers must be >= 1"),
            (self.hidden >= 1, "hidden must be >= 1"),
            (0.0 <= self.epsilon_final <= self.epsilon_initial <= 1.0,
             "need 0 <= epsilon_final <= epsilon_initial <= 1"),
            (self.epsilon_decay_epochs >= 1, "epsilon_decay_epochs must be >= 1"),
            (self.w_eta_initial >= 0 and self.w_eta_final >= 0, "w_eta weights must be >= 0"),
            (self.w_eta_switch_epoch >= 0, "w_eta_switch_epoch must be >= 0"),
            (self.w_ent >= 0, "w_ent must be >= 0"),
            (self.pretrain_epochs >= 0, "pretrain_epochs must be >= 0"),
            (self.pretrain_lr > 0, "pretrain_lr must be positive"),
            (self.pretrain_beta >= 0, "pretrain_beta must be >= 0"),
            (1 <= self.segment_length_min <= self.segment_length_max,
             "need 1 <= segment_length_min <= segment_length_max"),
            (0.0 <= self.baseline_decay < 1.0, "baseline_decay must be in [0, 1)"),
            (self.grad_clip > 0, "grad_clip must be positive"),
            (self.bootstrap_epochs >= 0, "bootstrap_epochs must be >= 0"),
            (self.bootstrap_weight >= 0, "bootstrap_weight must be >= 0"),
            (0.0 < self.term_prior < 1.0, "term_prior must be in (0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(f"train config: {msg}")
        return self


@dataclass
class TrainerState:
    """Mutable loop state carried across epochs and through checkpoints."""

    epoch: int = 0
    baseline: Optional[float] = None
    rng_state: Optional[dict] = None


def epsilon_at(cfg: TrainConfig, epoch: int) -> float:
    """Exploration rate: linear from initial to final over decay epochs."""
    if epoch < 0:
        raise InputError(f"epoch must be >= 0, got {epoch}")
    if epoch >= cfg.epsilon_decay_epochs:
        return cfg.epsilon_final
    frac = epoch / cfg.epsilon_decay_epochs
    return cfg.epsilon_initial + (cfg.epsilon_final - cfg.epsilon_initial) * frac


def w_eta_at(cfg: TrainConfig, epoch: int) -> float:
    """Option-likelihood weight: step from initial to final at the switch."""
    if epoch < 0:
        raise InputError(f"epoch must be >= 0, got {epoch}")
    return cfg.w_eta_final if epoch >= cfg.w_eta_switch_epoch else cfg.w_eta_initial


def build_triple(cfg: TrainConfig, d_s: int, d_a: int, d_c: int = 0) -> ns.PolicyTriple:
    dims = ns.Dims(d_s=d_s, d_a=d_a, d_z=cfg.d_z, d_c=d_c)
    return ns.PolicyTriple(dims, layers=cfg.layers, hidden=cfg.hidden, seed=cfg.seed)


def loss_weights_at(cfg: TrainConfig, epoch: int) -> LossWeights:
    """Objective weights for an epoch.

    The posterior-entropy term always carries the divergence weight w_ent.
    The option-likelihood warmup factor multiplies that same weight, so the
    high-level likelihood and the posterior entropy stay a paired divergence:
    with independent weights the pair is unbounded above (both networks can
    shrink code variance together and collect density without limit), which
    degenerates into switching at every step.
    """
    return LossWeights(w_eta=cfg.w_ent * w_eta_at(cfg, epoch), w_ent=cfg.w_ent)


def action_change_jumps(traj) -> np.ndarray:
    """L2 norms of consecutive-action differences; length T - 1."""
    d = np.diff(traj.actions, axis=0)
    return np.sqrt((d * d).sum(axis=1))


def fit_change_threshold(trajectories) -> float:
    """Midpoint of a two-means split of all action jumps in the dataset.

    Separates the within-segment noise floor from between-segment behavior
    changes without any labels. Degenerate data (no jumps, or all jumps
    equal) yields a threshold that flags nothing.
    """
    vals = np.concatenate([action_change_jumps(t) for t in trajectories] or [()])
    if vals.size == 0:
        return float("inf")
    centers = np.array([vals.min(), vals.max()], dtype=np.float64)
    for _ in range(100):
        assign = np.abs(vals[:, None] - centers[None, :]).argmin(axis=1)
        moved = np.array(
            [vals[assign == j].mean() if np.any(assign == j) else centers[j] for j in range(2)]
        )
        if np.allclose(moved, centers):
            break
        centers = moved
    return float(centers.mean())


def change_point_pattern(traj, threshold: float) -> np.ndarray:
    """Proposed switch pattern: step 1 plus every step whose action jumped
    by more than the threshold relative to the step before it."""
    b = np.zeros(traj.states.shape[0], dtype=np.int64)
    b[0] = 1
    b[1:][action_change_jumps(traj) > threshold] = 1
    return b


def train_iteration(traj, triple, cfg: TrainConfig, epoch: int, rng, state: TrainerState, clamp_b=None):
    """One trajectory, one optimizer step per network; returns the breakdown.

    The surrogate is J plus a detached advantage times the log mass of the
    switch decisions under the distribution they were actually drawn from
    (the epsilon-greedy mixture; at epsilon = 0 that is q itself), so a
    single backward pass yields both the pathwise and the score-function
    gradients. The advantage baseline is used before it is updated
    (exponential moving average, seeded by the first value seen).

    The advantage is shaped by a fixed Bernoulli(term_prior) log-prior over
    the switch decisions at steps >= 2. The high-level policy adapts its
    termination head toward whatever the posterior does, so at equilibrium
    the learned objective carries no per-switch cost of its own; the fixed
    prior is the one cost scale the networks cannot negotiate away, and it
    is what separates paying switches (a fresh code worth more than the
    prior cost) from free-riding ones.

    With clamp_b the switch pattern is fixed instead of sampled (bootstrap
    phase) and the score term doubles as a supervised pattern likelihood:
    bootstrap_weight is added to the advantage so the pull toward the
    proposed pattern does not vanish as the baseline catches up.
    """
    q_out = ns.q_forward(triple, traj)
    eps_now = epsilon_at(cfg, epoch)
    weights = loss_weights_at(cfg, epoch)
    if clamp_b is not None:
        zeta = clamped_zeta(q_out, clamp_b, eps_now, rng)
    else:
        zeta = sample_zeta(q_out, eps_now, rng)
    res = objective(traj, zeta, triple, weights, q_out=q_out)
    if clamp_b is not None:
        score = res.bern_log_q_score
    else:
        mix = q_out.p * (1.0 - eps_now) + 0.5 * eps_now
        mask = np.ones(zeta.length)
        mask[0] = 0.0
        score = bernoulli_log_prob(zeta.switch_mask(), mix, mask=mask)
    switches = float(zeta.b[1:].sum())
    stays = float(zeta.length - 1 - switches)
    shaped = (
        res.j.item()
        + switches * np.log(cfg.term_prior)
        + stays * np.log1p(-cfg.term_prior)
    )
    baseline = shaped if state.baseline is None else state.baseline
    advantage = shaped - baseline
    if clamp_b is not None:
        advantage += cfg.bootstrap_weight
    triple.zero_grad()
    backward(-(res.j + advantage * score))
    for store in triple.stores().values():
        store.clip_grad_norm(cfg.grad_clip)
        adam_step(store, cfg.lr)
    state.baseline = (
        cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * shaped
    )
    return res.breakdown


def _format_row(values) -> str:
    return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def run_training(
    trajectories,
    triple: ns.PolicyTriple,
    cfg: TrainConfig,
    out_dir=None,
    state: Optional[TrainerState] = None,
    encoder: Optional[SegmentEncoder] = None,
    log_fn=None,
):
    """Epochs of seeded-shuffled per-trajectory iterations; returns metric rows.

    The first bootstrap_epochs epochs clamp every iteration's switch pattern
    to an unsupervised change-point proposal fitted on the training actions;
    later epochs sample freely. If out_dir is given, appends one row per
    epoch to metrics.csv and writes one checkpoint per epoch
    (epoch_NNN.ckpt). Passing a checkpointed state resumes exactly: the RNG,
    baseline, and epoch counter continue bitwise (the proposal patterns are
    a pure function of the data, so a resumed run refits them identically).
    """
    if not trajectories:
        raise InputError("run_training requires at least one trajectory")
    if state is None:
        state = TrainerState()
    rng = np.random.default_rng(cfg.seed)
    if state.rng_state is not None:
        rng.bit_generator.state = state.rng_state

    patterns = None
    if 0 <= state.epoch < cfg.bootstrap_epochs:
        threshold = fit_change_threshold(trajectories)
        patterns = [change_point_pattern(t, threshold) for t in trajectories]

    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        if state.epoch == 0 or not metrics_path.exists():
            metrics_path.write_text(METRICS_HEADER + "\n")

    history = []
    n = len(trajectories)
    for epoch in range(state.epoch, cfg.epochs):
        sums = np.zeros(4)
        order = rng.permutation(n)
        in_bootstrap = patterns is not None and epoch < cfg.bootstrap_epochs
        for idx in order:
            try:
                bd = train_iteration(
                    trajectories[idx], triple, cfg, epoch, rng, state,
                    clamp_b=patterns[idx] if in_bootstrap else None,
                )
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch}, trajectory {idx}: {exc} "
                    f"(epsilon={epsilon_at(cfg, epoch)!r}, "
                    f"w_eta={w_eta_at(cfg, epoch)!r}, baseline={state.baseline!r})"
                ) from exc
            sums += (bd.j_weighted, bd.sum_log_pi, bd.sum_log_eta, bd.neg_log_q)
        row = {
            "epoch": epoch,
            "mean_j": sums[0] / n,
            "mean_log_pi": sums[1] / n,
            "mean_log_eta": sums[2] / n,
            "mean_neg_log_q": sums[3] / n,
            "epsilon": epsilon_at(cfg, epoch),
            "w_eta": w_eta_at(cfg, epoch),
        }
        history.append(row)
        state.epoch = epoch + 1
        state.rng_state = rng.bit_generator.state
        if out_dir is not None:
            with open(metrics_path, "a") as fh:
                fh.write(_format_row(row.values()) + "\n")
            save_checkpoint(
                out_dir / f"epoch_{epoch:03d}.ckpt", triple, cfg, state, encoder
            )
        if log_fn is not None:
            log_fn(row)
    return history


def run_pretraining_stage(trajectories, cfg: TrainConfig, d_s: int, d_a: int, out_dir=None, log_fn=None):
    """Build fresh networks and pretrain the low-level policy as a segment VAE.

    Returns (triple, encoder, history). The pretraining RNG stream is derived
    from the seed independently of the main loop's stream. With q_warm_start
    the trained encoder seeds the posterior trunk and code head.
    """
    triple = build_triple(cfg, d_s, d_a)
    encoder = SegmentEncoder(triple.dims, layers=cfg.layers, hidden=cfg.hidden, seed=cfg.seed)
    history = run_pretraining(
        triple,
        encoder,
        trajectories,
        epochs=cfg.pretrain_epochs,
        lr=cfg.pretrain_lr,
        beta=cfg.pretrain_beta,
        length_range=(cfg.segment_length_min, cfg.segment_length_max),
        rng=np.random.default_rng([cfg.seed, 5]),
        log_fn=log_fn,
    )
    if cfg.q_warm_start:
        warm_start_posterior(encoder, triple)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = [PRETRAIN_METRICS_HEADER] + [
            _format_row((r["epoch"], r["loss"], r["recon_log_prob"], r["kl"]))
            for r in history
        ]
        (out_dir / "pretrain_metrics.csv").write_text("\n".join(lines) + "\n")
        save_checkpoint(out_dir / "pretrained.ckpt", triple, cfg, TrainerState(), encoder)
    return triple, encoder, history


def evaluate_mean_objective(trajectories, triple, weights: LossWeights) -> float:
    """Mean J over a fixed batch with the posterior's greedy option sequence."""
    if not trajectories:
        raise InputError("evaluate_mean_objective requires at least one trajectory")
    total = 0.0
    for traj in trajectories:
        q_out = ns.q_forward(triple, traj)
        res = objective(traj, greedy_zeta(q_out), triple, weights, q_out=q_out)
        total += res.breakdown.j_weighted
    return total / len(trajectories)


# ---------------------------------------------------------------------------
# checkpoint serialization


def _store_entries(triple, encoder):
    stores = dict(triple.stores())
    if encoder is not None:
        stores["encoder"] = encoder.store
    return stores


def save_checkpoint(path, triple, cfg: TrainConfig, state: TrainerState, encoder=None):
    stores = _store_entries(triple, encoder)
    manifest_stores = []
    chunks = []
    for name in sorted(stores):
        store = stores[name]
        params = []
        for pname, tensor in store.items():
            params.append({"name": pname, "shape": list(tensor.data.shape)})
            m, v = store.moments(pname)
            for arr in (tensor.data, m, v):
                chunks.append(np.ascontiguousarray(arr, dtype=np.float64).ravel())
        manifest_stores.append({"name": name, "step": store.step, "params": params})
    payload = np.concatenate(chunks) if chunks else np.zeros(0)
    dims = triple.dims
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "dims": {"d_s": dims.d_s, "d_a": dims.d_a, "d_z": dims.d_z, "d_c": dims.d_c},
        "state": {
            "epoch": state.epoch,
            "baseline": state.baseline,
            "rng_state": state.rng_state,
        },
        "stores": manifest_stores,
        "payload_doubles": int(payload.size),
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload.astype("<f8").tobytes())


@dataclass
class LoadedCheckpoint:
    config: TrainConfig
    triple: ns.PolicyTriple
    encoder: Optional[SegmentEncoder]
    state: TrainerState
    dims: ns.Dims


def load_checkpoint(path) -> LoadedCheckpoint:
    """Rebuild networks and trainer state; any inconsistency is a load error."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (blob_len,) = struct.unpack_from("<Q", raw, len(CHECKPOINT_MAGIC))
    header_end = len(CHECKPOINT_MAGIC) + 8
    if header_end + blob_len > len(raw):
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[header_end : header_end + blob_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: manifest is not valid JSON: {exc}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {manifest.get('version')!r}"
        )
    try:
        cfg = TrainConfig.from_dict(manifest["config"])
        dims = ns.Dims(**manifest["dims"])
        st = manifest["state"]
        state = TrainerState(st["epoch"], st["baseline"], st["rng_state"])
        store_manifests = manifest["stores"]
        payload_doubles = manifest["payload_doubles"]
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: malformed manifest: {exc}") from exc

    payload = np.frombuffer(raw, dtype="<f8", offset=header_end + blob_len)
    if payload.size != payload_doubles:
        raise CheckpointError(
            f"{path}: payload holds {payload.size} doubles, manifest says {payload_doubles}"
        )

    triple = ns.PolicyTriple(dims, layers=cfg.layers, hidden=cfg.hidden, seed=cfg.seed)
    names = {m["name"] for m in store_manifests}
    encoder = None
    if "encoder" in names:
        encoder = SegmentEncoder(dims, layers=cfg.layers, hidden=cfg.hidden, seed=cfg.seed)
    stores = _store_entries(triple, encoder)
    if names != set(stores):
        raise CheckpointError(f"{path}: stores {sorted(names)} vs expected {sorted(stores)}")

    offset = 0
    for entry in sorted(store_manifests, key=lambda m: m["name"]):
        store = stores[entry["name"]]
        live = dict(store.items())
        manifest_names = [p["name"] for p in entry["params"]]
        if manifest_names != list(live):
            raise CheckpointError(
                f"{path}: store {entry['name']!r} parameter names disagree"
            )
        for pentry in entry["params"]:
            shape = tuple(pentry["shape"])
            if live[pentry["name"]].data.shape != shape:
                raise CheckpointError(
                    f"{path}: {entry['name']}.{pentry['name']} shape {shape} vs "
                    f"{live[pentry['name']].data.shape}"
                )
            size = int(np.prod(shape)) if shape else 1
            if offset + 3 * size > payload.size:
                raise CheckpointError(f"{path}: truncated payload")
            data = payload[offset : offset + size].reshape(shape).copy()
            m = payload[offset + size : offset + 2 * size].reshape(shape).copy()
            v = payload[offset + 2 * size : offset + 3 * size].reshape(shape).copy()
            offset += 3 * size
            store.set_param(pentry["name"], data)
            store.set_moments(pentry["name"], m, v)
        store.step = entry["step"]
    if offset != payload.size:
        raise CheckpointError(
            f"{path}: payload has {payload.size - offset} unread doubles"
        )
    return LoadedCheckpoint(cfg, triple, encoder, state, dims)
