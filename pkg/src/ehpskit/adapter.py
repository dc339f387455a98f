"""Gendered -> neutral shape adapter.

A 10 -> H -> H -> 10 ReLU network maps a gendered shape vector to a neutral
one so that both models, posed identically, produce matching meshes. The
loss is the mean (over samples and vertices) Euclidean distance between the
two posed meshes.

Gradients: the derivative of the loss w.r.t. the 10 adapter outputs is taken
by central differences through the neutral body model (20 extra forward
passes per sample), then backpropagated exactly through the network.
Training is plain gradient descent on a fixed batch. A step that would raise
the loss is rejected and the step size halved; an accepted step grows it by
``step_growth``. The loss trace therefore never increases.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .body_model import NUM_BETAS, BodyModelData, forward_batch
from .errors import InvalidArgument, RankDeficient, TrainingFailure

BODY_POSE_SIGMA = 0.3
HAND_POSE_SIGMA = 0.1
POSE_LIMIT = np.pi / 2
LINEARITY_TOL = 1e-9
INIT_SCHEMES = ("he", "active")


@dataclass
class AdapterMLP:
    weights: list[np.ndarray]  # (out, in) per layer
    biases: list[np.ndarray]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidArgument("adapter needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidArgument(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise InvalidArgument(f"layer {i}: input width {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidArgument(f"layer {i}: non-finite parameters")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @classmethod
    def init(cls, seed: int, hidden: int = 64, dim: int = NUM_BETAS, scheme: str = "he",
             margin: float = 3.0) -> "AdapterMLP":
        """Random network.

        ``he``: He-normal weights, zero biases.
        ``active``: LeCun-normal weights with biases chosen so every hidden
        unit sits ``margin`` above its kink for a zero input and the output is
        zero there. Standard-normal inputs then rarely switch units off, so
        training starts near the linear regime.
        """
        rng = np.random.default_rng(seed)
        sizes = [dim, hidden, hidden, dim]
        if scheme == "he":
            weights = [rng.normal(0.0, np.sqrt(2.0 / n_in), (n_out, n_in)) for n_in, n_out in zip(sizes, sizes[1:])]
            return cls(weights, [np.zeros(n) for n in sizes[1:]])
        if scheme != "active":
            raise InvalidArgument(f"unknown init scheme {scheme!r}")
        weights = [rng.normal(0.0, np.sqrt(1.0 / n_in), (n_out, n_in)) for n_in, n_out in zip(sizes, sizes[1:])]
        h = np.full(hidden, float(margin))
        biases = [h.copy(), h - weights[1] @ h, -(weights[2] @ h)]
        return cls(weights, biases)

    @classmethod
    def identity(cls, hidden: int = 64, dim: int = NUM_BETAS) -> "AdapterMLP":
        """Exact identity on all inputs, via x = relu(x) - relu(-x)."""
        if hidden < 2 * dim:
            raise InvalidArgument(f"identity needs at least {2 * dim} hidden units, got {hidden}")
        split = np.zeros((hidden, dim))
        split[:dim] = np.eye(dim)
        split[dim:2 * dim] = -np.eye(dim)
        merge = split.T.copy()
        zeros = np.zeros(hidden)
        return cls([split, np.eye(hidden), merge], [zeros, zeros.copy(), np.zeros(dim)])

    def __call__(self, beta) -> np.ndarray:
        return adapter_forward(self, beta)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params) -> "AdapterMLP":
        return AdapterMLP(list(params[0::2]), list(params[1::2]))

    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AdapterMLP":
        adapter = cls(doc["weights"], doc["biases"])
        if "layer_sizes" in doc and list(doc["layer_sizes"]) != adapter.layer_sizes:
            raise InvalidArgument(f"layer_sizes {doc['layer_sizes']} disagree with weights {adapter.layer_sizes}")
        return adapter


def _forward_with_cache(adapter: AdapterMLP, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    last = len(adapter.weights) - 1
    for i, (w, b) in enumerate(zip(adapter.weights, adapter.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return h, acts, pre


def adapter_forward(adapter: AdapterMLP, beta) -> np.ndarray:
    x = np.asarray(beta, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("adapter input contains non-finite values")
    return _forward_with_cache(adapter, x)[0]


def backprop(adapter: AdapterMLP, x: np.ndarray, grad_out: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients (same order as ``adapter.params()``) given dLoss/dOutput."""
    _, acts, pre = _forward_with_cache(adapter, x)
    n_layers = len(adapter.weights)
    grads = [None] * (2 * n_layers)
    delta = grad_out
    for i in reversed(range(n_layers)):
        if i != n_layers - 1:
            delta = delta * (pre[i] > 0)
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = delta @ adapter.weights[i]
    return grads


@dataclass
class LinearAdapter:
    matrix: np.ndarray  # (10, 10)
    bias: np.ndarray  # (10,)

    def __call__(self, beta) -> np.ndarray:
        return np.asarray(beta, dtype=np.float64) @ self.matrix.T + self.bias


def _check_topology(model_g: BodyModelData, model_n: BodyModelData) -> None:
    if model_g.num_vertices != model_n.num_vertices or model_g.tree != model_n.tree:
        raise InvalidArgument(
            "gendered and neutral models must share topology "
            f"({model_g.num_vertices} vs {model_n.num_vertices} vertices)"
        )


def _mesh_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-sample mean vertex distance, shape (B,)."""
    return np.linalg.norm(a - b, axis=-1).mean(axis=-1)


def adapter_loss(model_g: BodyModelData, model_n: BodyModelData, adapter, poses, betas) -> float:
    """Mean vertex distance (meters) between gendered and adapted-neutral posed meshes."""
    _check_topology(model_g, model_n)
    poses = np.asarray(poses, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    target, _ = forward_batch(model_g, poses, betas)
    mesh, _ = forward_batch(model_n, poses, adapter(betas))
    return float(_mesh_distance(target, mesh).mean())


def output_gradient(model_n: BodyModelData, poses, target, beta_n, eps: float) -> np.ndarray:
    """d(loss)/d(adapter output) by central differences through the neutral model.

    ``target`` holds the gendered posed meshes; the loss is averaged over the batch.
    """
    B, D = beta_n.shape
    shifts = np.concatenate([np.eye(D), -np.eye(D)]) * eps  # (2D, D)
    probe = (beta_n[:, None, :] + shifts[None]).reshape(B * 2 * D, D)
    probe_poses = np.repeat(poses, 2 * D, axis=0)
    mesh, _ = forward_batch(model_n, probe_poses, probe)
    dist = _mesh_distance(np.repeat(target, 2 * D, axis=0), mesh).reshape(B, 2 * D)
    return (dist[:, :D] - dist[:, D:]) / (2.0 * eps) / B


def loss_and_grad(model_g, model_n, adapter: AdapterMLP, poses, betas, eps: float = 1e-4, target=None):
    _check_topology(model_g, model_n)
    if target is None:
        target, _ = forward_batch(model_g, poses, betas)
    out = adapter_forward(adapter, betas)
    mesh, _ = forward_batch(model_n, poses, out)
    loss = float(_mesh_distance(target, mesh).mean())
    g_out = output_gradient(model_n, poses, target, out, eps)
    return loss, backprop(adapter, betas, g_out)


@dataclass
class NeutralLinearization:
    """Posed neutral meshes as an affine function of the shape vector, one per pose.

    With shape blendshapes and skinning only, a posed vertex is a fixed
    rotation blend applied to quantities linear in the shape vector, so the
    map is exactly affine for a fixed pose. The Jacobian comes from central
    differences through the model (two passes per shape dimension).
    """

    base: np.ndarray  # (B, V, 3) mesh at zero shape
    jac: np.ndarray  # (B, V*3, D)

    @classmethod
    def build(cls, model_n: BodyModelData, poses, eps: float) -> "NeutralLinearization":
        B, D = poses.shape[0], model_n.shape_dirs.shape[2]
        shifts = np.concatenate([np.eye(D), -np.eye(D)]) * eps
        probe = np.tile(shifts, (B, 1))
        mesh, _ = forward_batch(model_n, np.repeat(poses, 2 * D, axis=0), probe)
        mesh = mesh.reshape(B, 2 * D, -1)
        jac = np.swapaxes((mesh[:, :D] - mesh[:, D:]) / (2.0 * eps), 1, 2)
        base, _ = forward_batch(model_n, poses, np.zeros((B, D)))
        return cls(base, jac)

    def mesh(self, beta_n: np.ndarray) -> np.ndarray:
        flat = self.base.reshape(self.base.shape[0], -1) + (self.jac @ beta_n[..., None])[..., 0]
        return flat.reshape(self.base.shape)

    def max_deviation(self, model_n: BodyModelData, poses, beta_n) -> float:
        exact, _ = forward_batch(model_n, poses, beta_n)
        return float(np.abs(exact - self.mesh(beta_n)).max())


def _linearized_loss_grad(lin: NeutralLinearization, target, adapter: AdapterMLP, betas, want_grad=True):
    out = adapter_forward(adapter, betas)
    resid = target - lin.mesh(out)  # (B, V, 3)
    dist = np.linalg.norm(resid, axis=-1)
    loss = float(dist.mean())
    if not want_grad:
        return loss, None
    B, V = dist.shape
    unit = resid / np.where(dist > 0, dist, 1.0)[..., None] / (B * V)
    g_out = -(np.swapaxes(lin.jac, 1, 2) @ unit.reshape(B, -1, 1))[..., 0]
    return loss, backprop(adapter, betas, g_out)


def sample_poses(model: BodyModelData, n: int, seed: int) -> np.ndarray:
    """Clamped Gaussian axis-angle poses; global orientation, jaw and eyes stay zero."""
    rng = np.random.default_rng(seed)
    sigma = np.zeros(model.num_joints)
    for j, label in enumerate(model.tree.part_of_joint):
        if label == "body":
            sigma[j] = BODY_POSE_SIGMA
        elif label in ("left_hand", "right_hand"):
            sigma[j] = HAND_POSE_SIGMA
    poses = rng.normal(0.0, 1.0, (n, model.num_joints, 3)) * sigma[None, :, None]
    return np.clip(poses, -POSE_LIMIT, POSE_LIMIT)


def sample_betas(n: int, seed: int, dim: int = NUM_BETAS) -> np.ndarray:
    return np.random.default_rng(seed).normal(0.0, 1.0, (n, dim))


@dataclass
class AdapterTrainConfig:
    steps: int = 2000
    step_size: float = 1.0
    batch_size: int = 256
    pose_sampler_seed: int = 0
    beta_sampler_seed: int = 1
    init_seed: int = 2
    hidden: int = 64
    fd_epsilon: float = 1e-4
    step_growth: float = 1.05
    init_scheme: str = "active"
    init_margin: float = 3.0
    pose_free: bool = False

    def __post_init__(self):
        for name in ("steps", "batch_size", "hidden"):
            if getattr(self, name) <= 0:
                raise InvalidArgument(f"{name} must be positive")
        if not self.step_size > 0 or not self.fd_epsilon > 0:
            raise InvalidArgument("step_size and fd_epsilon must be positive")
        if not self.step_growth >= 1.0:
            raise InvalidArgument("step_growth must be at least 1")
        if self.init_scheme not in INIT_SCHEMES:
            raise InvalidArgument(f"init_scheme must be one of {INIT_SCHEMES}")


def training_batch(model: BodyModelData, config: AdapterTrainConfig):
    n = config.batch_size
    if config.pose_free:
        poses = np.zeros((n, model.num_joints, 3))
    else:
        poses = sample_poses(model, n, config.pose_sampler_seed)
    return poses, sample_betas(n, config.beta_sampler_seed)


def train_adapter(model_g, model_n, config: AdapterTrainConfig, adapter: AdapterMLP | None = None):
    """Fit an adapter; returns ``(adapter, loss_trace)`` with the initial loss plus one entry per step.

    The neutral model is linearized once per training pose (exact, see
    NeutralLinearization) and checked against true forward passes; if the
    check fails, every step falls back to fresh central differences.
    """
    _check_topology(model_g, model_n)
    poses, betas = training_batch(model_n, config)
    target, _ = forward_batch(model_g, poses, betas)
    if adapter is None:
        adapter = AdapterMLP.init(config.init_seed, config.hidden, scheme=config.init_scheme, margin=config.init_margin)

    lin = NeutralLinearization.build(model_n, poses, config.fd_epsilon)
    probe = adapter_forward(adapter, betas)
    scale = max(float(np.abs(target).max()), 1.0)
    if lin.max_deviation(model_n, poses, probe) <= LINEARITY_TOL * scale:
        def evaluate(a, want_grad=True):
            return _linearized_loss_grad(lin, target, a, betas, want_grad)
    else:
        def evaluate(a, want_grad=True):
            if want_grad:
                return loss_and_grad(model_g, model_n, a, poses, betas, config.fd_epsilon, target)
            mesh, _ = forward_batch(model_n, poses, adapter_forward(a, betas))
            return float(_mesh_distance(target, mesh).mean()), None

    with np.errstate(over="ignore", invalid="ignore"):
        return _descend(adapter, evaluate, config)


def _descend(adapter, evaluate, config):
    loss, grads = evaluate(adapter)
    if not np.isfinite(loss):
        raise TrainingFailure("loss is not finite", step=0)
    trace = [loss]
    lr = config.step_size
    for step in range(1, config.steps + 1):
        trial_params = [p - lr * g for p, g in zip(adapter.params(), grads)]
        if not all(np.all(np.isfinite(p)) for p in trial_params):
            raise TrainingFailure("parameters diverged", step=step)
        trial = adapter.with_params(trial_params)
        trial_loss, _ = evaluate(trial, want_grad=False)
        if np.isnan(trial_loss):
            raise TrainingFailure("loss is NaN", step=step)
        if trial_loss <= loss:
            adapter = trial
            loss, grads = evaluate(adapter)
            lr *= config.step_growth
        else:
            lr *= 0.5
        trace.append(loss)
    return adapter, trace


def eval_adapter(model_g, model_n, adapter, poses, betas) -> float:
    """Mean vertex-to-vertex error in millimeters."""
    return adapter_loss(model_g, model_n, adapter, poses, betas) * 1000.0


def fit_linear_baseline(model_g: BodyModelData, model_n: BodyModelData, betas) -> LinearAdapter:
    """Least-squares affine map matching rest (zero-pose) meshes over a batch of shapes.

    Valid because a rest mesh is linear in its shape coefficients.
    """
    _check_topology(model_g, model_n)
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 2:
        raise InvalidArgument("betas must be a (K, D) batch")
    k, d = betas.shape
    design = np.hstack([betas, np.ones((k, 1))])  # (K, D+1)
    rank_x = int(np.linalg.matrix_rank(design))
    if rank_x < d + 1:
        raise RankDeficient(f"shape batch of {k} samples cannot determine a {d}x{d} map plus bias", rank_x)
    basis_n = model_n.shape_dirs.reshape(-1, model_n.shape_dirs.shape[2])
    rank_s = int(np.linalg.matrix_rank(basis_n))
    if rank_s < basis_n.shape[1]:
        raise RankDeficient("neutral shape basis is rank deficient", rank_s)
    targets = (model_g.template_vertices[None] + np.einsum("kb,vcb->kvc", betas, model_g.shape_dirs)
               - model_n.template_vertices[None]).reshape(k, -1)
    best, *_ = np.linalg.lstsq(basis_n, targets.T, rcond=None)  # (D, K) per-sample optimum
    coef, *_ = np.linalg.lstsq(design, best.T, rcond=None)  # (D+1, D)
    return LinearAdapter(matrix=coef[:d].T.copy(), bias=coef[d].copy())


def save_checkpoint(path, adapter: AdapterMLP, config: AdapterTrainConfig | None = None,
                    final_eval_mm: float | None = None) -> None:
    doc = adapter.to_dict()
    doc["config"] = None if config is None else asdict(config)
    doc["final_eval_mm"] = final_eval_mm
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"checkpoint {path} is not valid JSON: {exc}") from None
    config = AdapterTrainConfig(**doc["config"]) if doc.get("config") else None
    return AdapterMLP.from_dict(doc), config, doc.get("final_eval_mm")
