"""Classifier families and training protocol.

Two fixed-depth MLP variants over dense feature vectors:

* single-head: hidden stack -> logits, softmax probabilities;
* dual-head: hidden stack -> (mu, sigma) with mu through ReLU and sigma
  through softplus, trained with the sampled Gaussian-logit NLL.

The hidden stack is Linear -> ReLU -> Dropout repeated ``hidden_layers``
times.  Training uses Adam with early stopping on validation loss; the
checkpoint with the lowest validation loss is restored before returning.
Dual-head validation losses reuse the same noise draws every epoch so early
stopping is not driven by sampling noise.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    ModelStateError,
)
from .nncore import (
    AdamState,
    DropoutLayer,
    LinearLayer,
    cross_entropy,
    make_rng,
    relu,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    softplus,
    spawn_seeds,
    stochastic_nll_from_draws,
)

Array = np.ndarray

HOMOSCEDASTIC = "homoscedastic"
HETEROSCEDASTIC = "heteroscedastic"

_HEAD_ALIASES = {
    "homo": HOMOSCEDASTIC,
    HOMOSCEDASTIC: HOMOSCEDASTIC,
    "hetero": HETEROSCEDASTIC,
    HETEROSCEDASTIC: HETEROSCEDASTIC,
}

SIGMA_FLOOR = 1e-12  # additive floor keeps sigma strictly positive

CHECKPOINT_FORMAT = 1

# default draw seed so prediction without an explicit rng is reproducible
_PREDICT_SEED = 0x5EED


def canonical_head(head: str) -> str:
    try:
        return _HEAD_ALIASES[head.lower()]
    except KeyError:
        raise ConfigError(
            f"head must be one of {sorted(set(_HEAD_ALIASES))}, got {head!r}"
        ) from None


@dataclass
class ModelConfig:
    input_dim: int
    hidden_layers: int = 3
    hidden_width: int = 300
    dropout: float = 0.1
    head: str = HOMOSCEDASTIC
    n_classes: int = 2
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 5
    batch_size: int = 64
    logit_samples: int = 50   # draws for the sampled NLL and dual-head prediction

    def __post_init__(self):
        self.head = canonical_head(self.head)
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ConfigError("hidden_layers and hidden_width must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")
        if self.n_classes != 2:
            raise ConfigError("only 2-class models are supported")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1 or self.logit_samples < 1:
            raise ConfigError("max_epochs, batch_size and logit_samples must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


class MlpModel:
    """Fixed-architecture MLP; weights are immutable once training returns."""

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        self.trained = False
        self.history: list[EpochRecord] = []
        rng = make_rng(self.seed)
        self.hidden: list[LinearLayer] = []
        self.dropouts: list[DropoutLayer] = []
        in_dim = config.input_dim
        for _ in range(config.hidden_layers):
            self.hidden.append(LinearLayer(in_dim, config.hidden_width, rng))
            self.dropouts.append(DropoutLayer(config.dropout))
            in_dim = config.hidden_width
        if config.head == HOMOSCEDASTIC:
            self.head = LinearLayer(in_dim, config.n_classes, rng)
            self.head_mu = None
            self.head_sigma = None
        else:
            self.head = None
            self.head_mu = LinearLayer(in_dim, config.n_classes, rng)
            self.head_sigma = LinearLayer(in_dim, config.n_classes, rng)

    # -- parameter plumbing -------------------------------------------------

    def _head_layers(self) -> list[LinearLayer]:
        if self.config.head == HOMOSCEDASTIC:
            return [self.head]
        return [self.head_mu, self.head_sigma]

    def parameters(self) -> list[Array]:
        params: list[Array] = []
        for layer in self.hidden + self._head_layers():
            params.extend(layer.parameters())
        return params

    def gradients(self) -> list[Array]:
        grads: list[Array] = []
        for layer in self.hidden + self._head_layers():
            grads.extend(layer.gradients())
        return grads

    def _snapshot(self) -> list[Array]:
        return [p.copy() for p in self.parameters()]

    def _restore(self, snapshot: list[Array]) -> None:
        for p, s in zip(self.parameters(), snapshot):
            p[...] = s

    # -- forward / backward -------------------------------------------------

    def _forward_hidden(self, x: Array, *, stochastic: bool, cache: bool,
                        rng: np.random.Generator | None):
        pre_acts = [] if cache else None
        h = x
        for lin, drop in zip(self.hidden, self.dropouts):
            z = lin.forward(h, train=cache)
            if cache:
                pre_acts.append(z)
            h = drop.forward(relu(z), train=stochastic, rng=rng)
        return h, pre_acts

    def _backward_hidden(self, dh: Array, pre_acts: list[Array]) -> None:
        for lin, drop, z in zip(reversed(self.hidden), reversed(self.dropouts),
                                reversed(pre_acts)):
            da = drop.backward(dh)
            dz = da * (z > 0.0)
            dh = lin.backward(dz)

    def raw_outputs(self, X: Array, *, stochastic: bool = False, cache: bool = False,
                    rng: np.random.Generator | None = None):
        """Head outputs: logits for single-head, (mu, sigma) for dual-head.

        ``stochastic`` keeps dropout masks active (weight sampling);
        ``cache`` retains activations for a following backward pass.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        h, pre_acts = self._forward_hidden(X, stochastic=stochastic, cache=cache, rng=rng)
        if self.config.head == HOMOSCEDASTIC:
            logits = self.head.forward(h, train=cache)
            if cache:
                self._cache = (pre_acts, None, None)
            return logits
        mu_pre = self.head_mu.forward(h, train=cache)
        sigma_pre = self.head_sigma.forward(h, train=cache)
        mu = relu(mu_pre)
        sigma = softplus(sigma_pre) + SIGMA_FLOOR
        if cache:
            self._cache = (pre_acts, mu_pre, sigma_pre)
        return mu, sigma

    def _train_batch(self, X: Array, y: Array, rng: np.random.Generator,
                     loss_rng: np.random.Generator) -> float:
        if self.config.head == HOMOSCEDASTIC:
            logits = self.raw_outputs(X, stochastic=True, cache=True, rng=rng)
            loss, dlogits, _ = softmax_cross_entropy(logits, y)
            pre_acts, _, _ = self._cache
            dh = self.head.backward(dlogits)
        else:
            mu, sigma = self.raw_outputs(X, stochastic=True, cache=True, rng=rng)
            eps = loss_rng.standard_normal(
                (X.shape[0], self.config.logit_samples, self.config.n_classes)
            )
            loss, dmu, dsigma = stochastic_nll_from_draws(mu, sigma, y, eps)
            pre_acts, mu_pre, sigma_pre = self._cache
            dmu_pre = dmu * (mu_pre > 0.0)
            dsigma_pre = dsigma * sigmoid(sigma_pre)
            dh = self.head_mu.backward(dmu_pre) + self.head_sigma.backward(dsigma_pre)
        self._backward_hidden(dh, pre_acts)
        self._cache = None
        return float(loss)

    def evaluate_loss(self, X: Array, y: Array, eval_seed: int) -> float:
        """Eval-mode loss; dual-head models redraw the same noise for a given
        eval_seed so losses are comparable across epochs."""
        if self.config.head == HOMOSCEDASTIC:
            logits = self.raw_outputs(X)
            return cross_entropy(softmax(logits), y)
        mu, sigma = self.raw_outputs(X)
        eps = make_rng(eval_seed).standard_normal(
            (X.shape[0], self.config.logit_samples, self.config.n_classes)
        )
        loss, _, _ = stochastic_nll_from_draws(mu, sigma, y, eps)
        return float(loss)


def train_model(model: MlpModel, X_train: Array, y_train: Array,
                X_val: Array, y_val: Array,
                rng: np.random.Generator | int | None = None) -> MlpModel:
    """Adam training with early stopping on validation loss.

    Stops after ``patience`` epochs without improvement or at ``max_epochs``;
    the weights of the best-validation epoch are restored.  The full
    per-epoch history stays on the model.
    """
    cfg = model.config
    X_train = np.asarray(X_train, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if X_train.shape[0] == 0 or X_val.shape[0] == 0:
        raise ConfigError("training and validation sets must be nonempty")
    if X_train.shape[1] != cfg.input_dim or X_val.shape[1] != cfg.input_dim:
        raise DimensionError(
            f"feature dim {X_train.shape[1]} does not match config input_dim {cfg.input_dim}"
        )
    rng = make_rng(model.seed if rng is None else rng)
    eval_seed = int(rng.integers(0, 2**63))
    opt = AdamState(lr=cfg.learning_rate)
    n = X_train.shape[0]

    best_loss = np.inf
    best_weights = None
    epochs_since_best = 0
    model.history = []

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss = model._train_batch(X_train[idx], y_train[idx], rng, rng)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            opt.step(model.parameters(), model.gradients())
            total += loss * idx.shape[0]
        train_loss = total / n
        val_loss = model.evaluate_loss(X_val, y_val, eval_seed)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        model.history.append(EpochRecord(epoch, train_loss, val_loss))
        if val_loss < best_loss:
            best_loss = val_loss
            best_weights = model._snapshot()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                break

    model._restore(best_weights)
    model.best_val_loss = float(best_loss)
    model.trained = True
    return model


# ---------------------------------------------------------------------------
# prediction under the three weight-sampling schemes
# ---------------------------------------------------------------------------


def _require_trained(model: MlpModel) -> None:
    if not model.trained:
        raise ModelStateError("model has not been trained")


def _dual_head_probs(mu: Array, sigma: Array, n_draws: int,
                     rng: np.random.Generator) -> Array:
    eps = rng.standard_normal((n_draws,) + mu.shape)
    return softmax(mu[None, ...] + sigma[None, ...] * eps).mean(axis=0)


def predict_vanilla(model: MlpModel, X: Array,
                    rng: np.random.Generator | None = None) -> Array:
    """One predictive distribution per instance from the point model.

    Dual-head models average softmax over ``logit_samples`` Gaussian draws;
    pass an rng to control them (a fixed default seed is used otherwise).
    """
    _require_trained(model)
    rng = make_rng(_PREDICT_SEED) if rng is None else rng
    out = model.raw_outputs(X)
    if model.config.head == HOMOSCEDASTIC:
        return softmax(out)
    mu, sigma = out
    return _dual_head_probs(mu, sigma, model.config.logit_samples, rng)


def predict_mc_dropout(model: MlpModel, X: Array, n_passes: int = 30,
                       rng: np.random.Generator | None = None) -> Array:
    """(N, T, C) predictive samples from T stochastic dropout passes."""
    _require_trained(model)
    if n_passes < 1:
        raise ConfigError(f"n_passes must be >= 1, got {n_passes}")
    if model.config.dropout == 0.0:
        warnings.warn(
            "dropout probability is 0; all stochastic passes are identical",
            stacklevel=2,
        )
    rng = make_rng(_PREDICT_SEED) if rng is None else rng
    samples = []
    for _ in range(n_passes):
        out = model.raw_outputs(X, stochastic=True, rng=rng)
        if model.config.head == HOMOSCEDASTIC:
            samples.append(softmax(out))
        else:
            mu, sigma = out
            samples.append(_dual_head_probs(mu, sigma, model.config.logit_samples, rng))
    return np.stack(samples, axis=1)


@dataclass
class Ensemble:
    """Independently seeded and trained models sharing one config."""

    members: list[MlpModel]

    def __post_init__(self):
        if not self.members:
            raise ConfigError("ensemble needs at least one member")
        cfgs = {json.dumps(asdict(m.config), sort_keys=True) for m in self.members}
        if len(cfgs) > 1:
            raise ConfigError("ensemble members must share one config")

    @property
    def config(self) -> ModelConfig:
        return self.members[0].config

    def __len__(self) -> int:
        return len(self.members)


def train_ensemble(config: ModelConfig, n_members: int,
                   X_train: Array, y_train: Array, X_val: Array, y_val: Array,
                   seed: int, member_seeds: list[int] | None = None) -> Ensemble:
    """Train ``n_members`` models with independent init/shuffle seeds spawned
    from ``seed`` (or explicit ``member_seeds``)."""
    if n_members < 1:
        raise ConfigError("n_members must be >= 1")
    if member_seeds is None:
        member_seeds = spawn_seeds(seed, n_members)
    if len(member_seeds) != n_members:
        raise ConfigError(f"expected {n_members} member seeds, got {len(member_seeds)}")
    members = []
    for member_seed in member_seeds:
        model = MlpModel(config, seed=member_seed)
        train_model(model, X_train, y_train, X_val, y_val)
        members.append(model)
    return Ensemble(members=members)


def predict_ensemble(ensemble: Ensemble, X: Array,
                     rng: np.random.Generator | None = None) -> Array:
    """(N, T, C) predictive samples, one eval-mode pass per member, in fixed
    member order."""
    for m in ensemble.members:
        _require_trained(m)
    rng = make_rng(_PREDICT_SEED) if rng is None else rng
    samples = [predict_vanilla(m, X, rng=rng) for m in ensemble.members]
    return np.stack(samples, axis=1)


def hetero_raw_outputs(model_or_ensemble, X: Array, n_passes: int | None = None,
                       rng: np.random.Generator | None = None):
    """Per-instance stacks of dual-head outputs across weight samples.

    Returns ``(mu, sigma)`` each of shape (N, T, C).  For an ensemble, T is
    the member count (eval-mode pass per member).  For a single model,
    ``n_passes`` > 1 samples weights via dropout; ``n_passes`` of 1 or None
    is a single eval-mode pass.
    """
    rng = make_rng(_PREDICT_SEED) if rng is None else rng
    if isinstance(model_or_ensemble, Ensemble):
        ensemble = model_or_ensemble
        if ensemble.config.head != HETEROSCEDASTIC:
            raise ConfigError("dual-head outputs need a heteroscedastic model")
        if n_passes is not None and n_passes != len(ensemble):
            raise ConfigError(
                f"n_passes={n_passes} conflicts with ensemble of {len(ensemble)} members"
            )
        outs = []
        for m in ensemble.members:
            _require_trained(m)
            outs.append(m.raw_outputs(X))
        mu = np.stack([o[0] for o in outs], axis=1)
        sigma = np.stack([o[1] for o in outs], axis=1)
        return mu, sigma

    model: MlpModel = model_or_ensemble
    if model.config.head != HETEROSCEDASTIC:
        raise ConfigError("dual-head outputs need a heteroscedastic model")
    _require_trained(model)
    if n_passes is None or n_passes == 1:
        mu, sigma = model.raw_outputs(X)
        return mu[:, None, :], sigma[:, None, :]
    if n_passes < 1:
        raise ConfigError(f"n_passes must be >= 1, got {n_passes}")
    if model.config.dropout == 0.0:
        warnings.warn(
            "dropout probability is 0; all stochastic passes are identical",
            stacklevel=2,
        )
    mus, sigmas = [], []
    for _ in range(n_passes):
        mu, sigma = model.raw_outputs(X, stochastic=True, rng=rng)
        mus.append(mu)
        sigmas.append(sigma)
    return np.stack(mus, axis=1), np.stack(sigmas, axis=1)


# ---------------------------------------------------------------------------
# checkpoint serialization (bit-exact for float64 weights)
# ---------------------------------------------------------------------------


def _model_arrays(model: MlpModel, prefix: str = "") -> dict[str, Array]:
    arrays = {}
    layers = model.hidden + model._head_layers()
    for i, layer in enumerate(layers):
        arrays[f"{prefix}layer{i}_w"] = layer.w
        arrays[f"{prefix}layer{i}_b"] = layer.b
    return arrays


def _model_meta(model: MlpModel) -> dict:
    return {
        "config": asdict(model.config),
        "seed": model.seed,
        "trained": model.trained,
        "history": [[r.epoch, r.train_loss, r.val_loss] for r in model.history],
        "best_val_loss": getattr(model, "best_val_loss", None),
    }


def _restore_model(meta: dict, arrays: dict[str, Array], prefix: str = "") -> MlpModel:
    model = MlpModel(ModelConfig(**meta["config"]), seed=meta["seed"])
    layers = model.hidden + model._head_layers()
    for i, layer in enumerate(layers):
        layer.w = np.array(arrays[f"{prefix}layer{i}_w"], dtype=np.float64)
        layer.b = np.array(arrays[f"{prefix}layer{i}_b"], dtype=np.float64)
    model.trained = meta["trained"]
    model.history = [EpochRecord(int(e), tl, vl) for e, tl, vl in meta["history"]]
    if meta.get("best_val_loss") is not None:
        model.best_val_loss = meta["best_val_loss"]
    return model


def save_model(model: MlpModel, path) -> None:
    np.savez(
        path,
        format_version=np.int64(CHECKPOINT_FORMAT),
        meta=json.dumps(_model_meta(model)),
        **_model_arrays(model),
    )


def load_model(path) -> MlpModel:
    with np.load(path, allow_pickle=False) as npz:
        if int(npz["format_version"]) != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint version in {path}")
        meta = json.loads(str(npz["meta"]))
        return _restore_model(meta, npz)


def save_ensemble(ensemble: Ensemble, path) -> None:
    arrays = {}
    metas = []
    for t, m in enumerate(ensemble.members):
        arrays.update(_model_arrays(m, prefix=f"m{t}_"))
        metas.append(_model_meta(m))
    np.savez(
        path,
        format_version=np.int64(CHECKPOINT_FORMAT),
        meta=json.dumps({"members": metas}),
        **arrays,
    )


def load_ensemble(path) -> Ensemble:
    with np.load(path, allow_pickle=False) as npz:
        if int(npz["format_version"]) != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint version in {path}")
        meta = json.loads(str(npz["meta"]))
        members = [
            _restore_model(m, npz, prefix=f"m{t}_") for t, m in enumerate(meta["members"])
        ]
    return Ensemble(members=members)
