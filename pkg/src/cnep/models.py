"""Conditional movement-primitive models: single-decoder CNMP and gated CNEP.

Both models encode (t, SM(t)) observation tuples, average the encodings into
a latent r, and decode Gaussian predictions at query times.  CNMP uses one
query network; CNEP routes through d expert query networks selected by a
gate network, trained with a weighted reconstruction loss plus two entropy
terms over the gate probabilities.

Gradients are hand-derived and accumulate into each model's flat parameter
store, so a full training step is: zero_grad, loss_and_grad, optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ObservationSet
from .errors import ConfigError
from .nn import (
    Mlp,
    MlpBank,
    MlpSpec,
    ParamStore,
    ParamTensor,
    gaussian_nll_backward,
    gaussian_nll_terms,
    softmax,
    softmax_backward,
    softplus,
)

_LOG_FLOOR = 1e-300  # keeps entropy gradients finite if a probability underflows


@dataclass(frozen=True)
class ModelConfig:
    """Shared topology knobs for building a CNEP and its parity CNMP."""

    dm: int
    num_experts: int = 2
    latent_width: int = 128
    encoder_hidden: tuple[int, ...] = (128, 128)
    expert_hidden: tuple[int, ...] = (128, 128)
    gate_hidden: tuple[int, ...] = (64,)
    activation: str = "relu"


@dataclass
class GaussianPrediction:
    """Per-dimension mean and raw scale; std is softplus of the raw scale."""

    mean: np.ndarray
    raw_scale: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return softplus(self.raw_scale)


@dataclass
class LossBreakdown:
    rec: float
    batch_entropy: float
    ind_entropy: float
    total: float
    alphas: tuple[float, float, float]
    gate_mean: np.ndarray | None = None   # column means of the gate matrix


@dataclass
class GenerationResult:
    """Generated means/stds plus, for CNEP, the winning expert and gate probs."""

    means: np.ndarray
    stds: np.ndarray
    chosen_expert: int | None = None
    gate_probs: np.ndarray | None = None


def weighted_rec_loss(expert_losses, probs) -> float:
    """(1/d) * sum_e loss_e * p_e for one trajectory."""
    L = np.asarray(expert_losses, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if L.shape != p.shape:
        raise ValueError("expert losses and gate probabilities must align")
    return float(L @ p / L.size)


def _row_entropies(P: np.ndarray) -> np.ndarray:
    """Entropy of each row with the 0 * log(0) = 0 convention."""
    terms = np.zeros_like(P)
    np.log(P, out=terms, where=P > 0)
    terms *= P
    return -terms.sum(axis=-1)


def batch_entropy(P) -> float:
    """Entropy of the column-mean gate distribution of a (b, d) matrix."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    return float(_row_entropies(P.mean(axis=0)))


def individual_entropy(P) -> float:
    """Mean per-row entropy of a (b, d) gate matrix, with 0*log(0) = 0."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    return float(_row_entropies(P).mean())


def _encoder_spec(dm, latent_width, hidden, activation):
    return MlpSpec(1 + dm, hidden, latent_width, activation)


def _query_spec(dm, latent_width, hidden, activation):
    return MlpSpec(latent_width + 1, hidden, 2 * dm, activation)


class _EncoderCore:
    """Observation encoding shared by both model kinds."""

    encoder: Mlp
    dm: int
    latent_width: int

    def encode(self, obs: ObservationSet) -> np.ndarray:
        """Mean of per-observation encodings.

        Tuples are put in time order first, which makes the float summation
        order canonical and the result exactly permutation invariant.
        """
        if len(obs) < 1:
            raise ValueError("cannot encode an empty observation set")
        if obs.values.shape[1] != self.dm:
            raise ConfigError(
                f"observation dm {obs.values.shape[1]} != model dm {self.dm}")
        order = np.argsort(obs.times, kind="stable")
        enc_in = np.concatenate(
            [obs.times[order, None], obs.values[order]], axis=1)
        return self.encoder.forward(enc_in).mean(axis=0)

    def _encode_batch(self, obs_t, obs_sm):
        b, n = obs_t.shape
        enc_in = np.concatenate(
            [obs_t.reshape(b * n, 1), obs_sm.reshape(b * n, self.dm)], axis=1)
        enc_out, cache = self.encoder.forward_cached(enc_in)
        R = enc_out.reshape(b, n, self.latent_width).mean(axis=1)
        return R, cache

    def _encoder_backward(self, cache, dR, n):
        b = dR.shape[0]
        denc = np.repeat(dR / n, n, axis=0).reshape(b * n, self.latent_width)
        self.encoder.backward(cache, denc)

    def _query_input(self, R, tgt_t):
        b, m = tgt_t.shape
        return np.concatenate(
            [np.repeat(R, m, axis=0), tgt_t.reshape(b * m, 1)], axis=1)

    def parameter_count(self) -> int:
        return self.store.size


class CnmpModel(_EncoderCore):
    """Baseline model: one encoder, one query network, plain NLL loss."""

    kind = "cnmp"

    def __init__(self, dm: int, latent_width: int = 128,
                 encoder_hidden: tuple[int, ...] = (128, 128),
                 query_hidden: tuple[int, ...] = (128, 128),
                 activation: str = "relu", seed: int = 0):
        self.dm = dm
        self.latent_width = latent_width
        enc_spec = _encoder_spec(dm, latent_width, encoder_hidden, activation)
        q_spec = _query_spec(dm, latent_width, query_hidden, activation)
        self.store = ParamStore(enc_spec.parameter_count() + q_spec.parameter_count())
        rng = np.random.default_rng([seed, 0])
        self.encoder = Mlp(enc_spec, self.store, rng)
        self.query_net = Mlp(q_spec, self.store, rng)

    def query(self, r: np.ndarray, t_q: float) -> GaussianPrediction:
        out = self.query_net.forward(np.concatenate([r, [t_q]]))
        return GaussianPrediction(out[:self.dm].copy(), out[self.dm:].copy())

    def loss(self, batch) -> float:
        """Mean NLL over all targets of all (obs, target_times, target_sm) items."""
        if not batch:
            raise ValueError("batch must be non-empty")
        total, count = 0.0, 0
        for obs, tgt_t, tgt_sm in batch:
            r = self.encode(obs)
            tgt_t = np.atleast_1d(np.asarray(tgt_t, dtype=np.float64))
            x = np.asarray(tgt_sm, dtype=np.float64).reshape(len(tgt_t), self.dm)
            q_in = np.concatenate(
                [np.repeat(r[None, :], len(tgt_t), axis=0), tgt_t[:, None]], axis=1)
            out = self.query_net.forward(q_in)
            total += gaussian_nll_terms(x, out[:, :self.dm], out[:, self.dm:]).sum()
            count += len(tgt_t)
        return float(total / count)

    def loss_and_grad(self, obs_t, obs_sm, tgt_t, tgt_sm,
                      alphas=None, want_grad: bool = True) -> LossBreakdown:
        """Rectangular-batch loss; accumulates parameter gradients when asked."""
        b, n = obs_t.shape
        m = tgt_t.shape[1]
        R, enc_cache = self._encode_batch(obs_t, obs_sm)
        q_in = self._query_input(R, tgt_t)
        out, q_cache = self.query_net.forward_cached(q_in)
        mu, raw = out[:, :self.dm], out[:, self.dm:]
        x = tgt_sm.reshape(b * m, self.dm)
        loss = float(gaussian_nll_terms(x, mu, raw).sum() / (b * m))
        if want_grad:
            dmu, draw = gaussian_nll_backward(x, mu, raw)
            gout = np.concatenate([dmu, draw], axis=1) / (b * m)
            gin = self.query_net.backward(q_cache, gout)
            dR = gin[:, :self.latent_width].reshape(b, m, self.latent_width).sum(axis=1)
            self._encoder_backward(enc_cache, dR, n)
        return LossBreakdown(loss, 0.0, 0.0, loss, (1.0, 0.0, 0.0))

    def generate(self, obs: ObservationSet, query_times) -> GenerationResult:
        """Decode every query time from one latent computed once from obs."""
        r = self.encode(obs)
        times = np.atleast_1d(np.asarray(query_times, dtype=np.float64))
        q_in = np.concatenate(
            [np.repeat(r[None, :], len(times), axis=0), times[:, None]], axis=1)
        out = self.query_net.forward(q_in)
        return GenerationResult(out[:, :self.dm].copy(), softplus(out[:, self.dm:]))

    def named_params(self):
        for label, net in (("encoder", self.encoder), ("query", self.query_net)):
            for i, (w, bias) in enumerate(zip(net.weights, net.biases)):
                yield f"{label}.l{i}.W", w
                yield f"{label}.l{i}.b", bias

    def topology(self) -> dict:
        return {
            "dm": self.dm,
            "latent_width": self.latent_width,
            "encoder_hidden": list(self.encoder.spec.hidden_widths),
            "query_hidden": list(self.query_net.spec.hidden_widths),
            "activation": self.encoder.spec.hidden_activation,
        }


class CnepModel(_EncoderCore):
    """Gated mixture model: encoder, gate network, and d expert query networks."""

    kind = "cnep"

    def __init__(self, dm: int, num_experts: int = 2, latent_width: int = 128,
                 encoder_hidden: tuple[int, ...] = (128, 128),
                 expert_hidden: tuple[int, ...] = (128, 128),
                 gate_hidden: tuple[int, ...] = (64,),
                 activation: str = "relu", seed: int = 0):
        if num_experts < 1:
            raise ConfigError("num_experts must be >= 1")
        self.dm = dm
        self.d = num_experts
        self.latent_width = latent_width
        enc_spec = _encoder_spec(dm, latent_width, encoder_hidden, activation)
        gate_spec = MlpSpec(latent_width, gate_hidden, num_experts, activation)
        ex_spec = _query_spec(dm, latent_width, expert_hidden, activation)
        total = (enc_spec.parameter_count() + gate_spec.parameter_count()
                 + num_experts * ex_spec.parameter_count())
        self.store = ParamStore(total)
        rng = np.random.default_rng([seed, 0])
        self.encoder = Mlp(enc_spec, self.store, rng)
        self.gate = Mlp(gate_spec, self.store, rng)
        self.experts = MlpBank(ex_spec, num_experts, self.store, rng)

    def gate_probs(self, r: np.ndarray) -> np.ndarray:
        """Softmax over gate logits for one latent; a d-simplex vector."""
        return softmax(self.gate.forward(np.asarray(r, dtype=np.float64)))

    def expert_losses(self, r: np.ndarray, tgt_t, tgt_sm) -> np.ndarray:
        """Per-expert mean NLL over the targets; all experts evaluated."""
        tgt_t = np.atleast_1d(np.asarray(tgt_t, dtype=np.float64))
        x = np.asarray(tgt_sm, dtype=np.float64).reshape(len(tgt_t), self.dm)
        q_in = np.concatenate(
            [np.repeat(np.asarray(r)[None, :], len(tgt_t), axis=0), tgt_t[:, None]],
            axis=1)
        out = self.experts.forward(q_in)
        nll = gaussian_nll_terms(x[None, :, :], out[:, :, :self.dm],
                                 out[:, :, self.dm:]).sum(axis=2)
        return nll.mean(axis=1)

    def loss(self, batch, alphas=(1.0, -1.0, 1.0)) -> LossBreakdown:
        """Three-component loss over (obs, target_times, target_sm) items.

        rec is the batch mean of the per-item gate-weighted expert losses;
        batch_entropy is the entropy of the batch-averaged gate distribution;
        ind_entropy is the mean per-item gate entropy.
        """
        if not batch:
            raise ValueError("batch must be non-empty")
        P = np.empty((len(batch), self.d))
        rec_terms = np.empty(len(batch))
        for i, (obs, tgt_t, tgt_sm) in enumerate(batch):
            r = self.encode(obs)
            P[i] = self.gate_probs(r)
            rec_terms[i] = weighted_rec_loss(self.expert_losses(r, tgt_t, tgt_sm), P[i])
        return self._assemble(float(rec_terms.mean()), P, alphas)

    def _assemble(self, rec: float, P: np.ndarray, alphas) -> LossBreakdown:
        a1, a2, a3 = (float(a) for a in alphas)
        be = batch_entropy(P)
        ie = individual_entropy(P)
        return LossBreakdown(rec, be, ie, a1 * rec + a2 * be + a3 * ie,
                             (a1, a2, a3), gate_mean=P.mean(axis=0))

    def loss_and_grad(self, obs_t, obs_sm, tgt_t, tgt_sm,
                      alphas=(1.0, -1.0, 1.0), want_grad: bool = True) -> LossBreakdown:
        """Rectangular-batch loss and, when asked, gradients of the total.

        Gradient flow: each expert's NLL rows are weighted by a1 * p[i, e];
        the gate probabilities receive terms from the weighted reconstruction
        loss and from both entropy components; latent gradients from the gate
        and all experts are pooled before the encoder backward pass.
        """
        a1, a2, a3 = (float(a) for a in alphas)
        b, n = obs_t.shape
        m = tgt_t.shape[1]
        d, dm, L = self.d, self.dm, self.latent_width

        R, enc_cache = self._encode_batch(obs_t, obs_sm)
        glogits, gate_cache = self.gate.forward_cached(R)
        P = softmax(glogits)
        q_in = self._query_input(R, tgt_t)
        x = tgt_sm.reshape(b * m, dm)

        out, ex_cache = self.experts.forward_cached(q_in)      # (d, b*m, 2dm)
        mu, raw = out[:, :, :dm], out[:, :, dm:]
        rows = gaussian_nll_terms(x[None, :, :], mu, raw).sum(axis=2)
        Lmat = rows.reshape(d, b, m).mean(axis=2).T            # (b, d)
        rec = float((Lmat * P).sum(axis=1).mean() / d)
        breakdown = self._assemble(rec, P, alphas)

        if not want_grad:
            return breakdown

        w = np.repeat(a1 * P.T / (d * b * m), m, axis=1)[:, :, None]   # (d, b*m, 1)
        dmu, draw = gaussian_nll_backward(x[None, :, :], mu, raw)
        gin = self.experts.backward(ex_cache, np.concatenate([dmu * w, draw * w], axis=2))
        dR = gin[:, :, :L].sum(axis=0).reshape(b, m, L).sum(axis=1)

        pbar = P.mean(axis=0)
        dP = (a1 * Lmat / (d * b)
              - a2 * (np.log(np.maximum(pbar, _LOG_FLOOR)) + 1.0) / b
              - a3 * (np.log(np.maximum(P, _LOG_FLOOR)) + 1.0) / b)
        dR += self.gate.backward(gate_cache, softmax_backward(P, dP))
        self._encoder_backward(enc_cache, dR, n)
        return breakdown

    def generate(self, obs: ObservationSet, query_times) -> GenerationResult:
        """Argmax-gated generation: only the most confident expert decodes.

        Ties break toward the lowest expert index.
        """
        r = self.encode(obs)
        p = self.gate_probs(r)
        chosen = int(np.argmax(p))
        times = np.atleast_1d(np.asarray(query_times, dtype=np.float64))
        q_in = np.concatenate(
            [np.repeat(r[None, :], len(times), axis=0), times[:, None]], axis=1)
        out = self.experts.member_forward(chosen, q_in)
        return GenerationResult(
            out[:, :self.dm].copy(), softplus(out[:, self.dm:]), chosen, p)

    def _gate_hidden(self, R: np.ndarray) -> np.ndarray:
        """Activations feeding the gate's output layer for latents R."""
        _, cache = self.gate.forward_cached(R)
        return cache[-1]

    def split_expert(self, busy: int, dead: int, rng: np.random.Generator,
                     extra_flats: tuple = (), probe_latents: np.ndarray | None = None,
                     noise: float = 0.05):
        """Clone the busy expert onto the dead one and split their gate mass.

        The dead expert's weights (plus any parallel flat arrays, e.g.
        optimizer moments) become a lightly perturbed copy of the busy
        expert's, so the reconstruction loss is continuous across the move
        while the batch entropy improves.

        When probe_latents are given, the busy cluster is bisected along the
        top principal direction of its gate-hidden activations: the two gate
        output rows get opposite-signed copies of that direction, so each
        clone immediately owns one side of the cluster's dominant internal
        variation instead of relying on noise to break the tie.
        """
        if busy == dead:
            raise ValueError("busy and dead expert must differ")
        flats = (self.store.values, *extra_flats)
        for t in (*self.experts.weights, *self.experts.biases):
            for flat in flats:
                view = flat[t.span].reshape(t.shape)
                view[dead] = view[busy]
        for t in (*self.experts.weights, *self.experts.biases):
            view = self.store.values[t.span].reshape(t.shape)
            scale = noise * max(float(np.abs(view[busy]).mean()), 1e-3)
            view[dead] += rng.uniform(-scale, scale, size=view[dead].shape)
        gw, gb = self.gate.weights[-1], self.gate.biases[-1]
        for flat in flats:
            wv = flat[gw.span].reshape(gw.shape)
            wv[:, dead] = wv[:, busy]
            bv = flat[gb.span].reshape(gb.shape)
            bv[dead] = bv[busy]

        if probe_latents is None or len(probe_latents) < 4:
            return
        H = self._gate_hidden(np.asarray(probe_latents, dtype=np.float64))
        owners = np.argmax(softmax(self.gate.forward(probe_latents)), axis=1)
        mine = H[(owners == busy) | (owners == dead)]
        if len(mine) < 4:
            mine = H
        center = mine.mean(axis=0)
        X = mine - center
        v = rng.standard_normal(X.shape[1])
        for _ in range(30):   # power iteration on the cluster covariance
            v = X.T @ (X @ v)
            norm = np.linalg.norm(v)
            if norm == 0.0:
                return
            v /= norm
        proj = X @ v
        spread = float(np.abs(proj).mean())
        if spread < 1e-9:
            return
        kappa = 2.0 / spread
        wv = self.store.values[gw.span].reshape(gw.shape)
        bv = self.store.values[gb.span].reshape(gb.shape)
        wv[:, dead] += kappa * v
        bv[dead] -= kappa * float(v @ center)
        wv[:, busy] -= kappa * v
        bv[busy] += kappa * float(v @ center)

    def named_params(self):
        for label, net in (("encoder", self.encoder), ("gate", self.gate)):
            for i, (w, bias) in enumerate(zip(net.weights, net.biases)):
                yield f"{label}.l{i}.W", w
                yield f"{label}.l{i}.b", bias
        for e in range(self.d):
            for i, (w, bias) in enumerate(zip(self.experts.weights, self.experts.biases)):
                yield (f"expert{e}.l{i}.W",
                       ParamTensor(w.shape[1:], w.values[e], w.grad[e]))
                yield (f"expert{e}.l{i}.b",
                       ParamTensor(bias.shape[1:], bias.values[e], bias.grad[e]))

    def topology(self) -> dict:
        return {
            "dm": self.dm,
            "num_experts": self.d,
            "latent_width": self.latent_width,
            "encoder_hidden": list(self.encoder.spec.hidden_widths),
            "expert_hidden": list(self.experts.spec.hidden_widths),
            "gate_hidden": list(self.gate.spec.hidden_widths),
            "activation": self.encoder.spec.hidden_activation,
        }


def build_cnep(cfg: ModelConfig, seed: int = 0) -> CnepModel:
    return CnepModel(cfg.dm, cfg.num_experts, cfg.latent_width, cfg.encoder_hidden,
                     cfg.expert_hidden, cfg.gate_hidden, cfg.activation, seed)


def parity_query_widths(cfg: ModelConfig) -> tuple[int, ...]:
    """Hidden widths for a CNMP whose size lands in [1.0, 1.1] x CNEP size.

    The query network keeps the expert depth; its width grows until the
    total parameter count first reaches the CNEP count, which by the step
    size of one-unit width increments always stays under the 1.1 cap.
    """
    cnep_total = (
        _encoder_spec(cfg.dm, cfg.latent_width, cfg.encoder_hidden, cfg.activation)
        .parameter_count()
        + MlpSpec(cfg.latent_width, cfg.gate_hidden, cfg.num_experts,
                  cfg.activation).parameter_count()
        + cfg.num_experts * _query_spec(cfg.dm, cfg.latent_width, cfg.expert_hidden,
                                        cfg.activation).parameter_count())
    enc_count = _encoder_spec(
        cfg.dm, cfg.latent_width, cfg.encoder_hidden, cfg.activation).parameter_count()
    depth = len(cfg.expert_hidden)
    w = 1
    while True:
        q_spec = _query_spec(cfg.dm, cfg.latent_width, (w,) * depth, cfg.activation)
        total = enc_count + q_spec.parameter_count()
        if total >= cnep_total:
            if total > int(1.1 * cnep_total):
                raise ConfigError(
                    f"no query width gives parameter parity (got {total} "
                    f"vs target [{cnep_total}, {int(1.1 * cnep_total)}])")
            return (w,) * depth
        w += 1


def build_parity_cnmp(cfg: ModelConfig, seed: int = 0) -> CnmpModel:
    """CNMP sized marginally above the CNEP built from the same config."""
    widths = parity_query_widths(cfg)
    return CnmpModel(cfg.dm, cfg.latent_width, cfg.encoder_hidden, widths,
                     cfg.activation, seed)
