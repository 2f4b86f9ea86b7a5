"""Baum-Welch training of phone HMMs over a transcribed corpus.

E step: forward-backward over each utterance's composite HMM gives state
occupancies (gamma) and arc occupancies (xi). Those are pooled into
per-(phone, state) sufficient statistics shared by every utterance. M step:
means, variances and transition probabilities become occupancy-weighted
averages.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from qari.acoustic import (
    N_STATES,
    AcousticModel,
    GaussianState,
    PhoneHmm,
    compose_utterance,
    flat_start,
    topology_mask,
)
from qari.errors import (
    EmptyAccumulatorError,
    InconsistentTrellisError,
    NoUsableUtterancesError,
    UnmappedStateError,
    UtteranceTooShortError,
)
from qari.logmath import LOG_ZERO, logsumexp, safe_log

log = logging.getLogger(__name__)

MIN_OCCUPANCY = 1e-6
# absolute floor so that constant feature dimensions still get a usable variance
MIN_VARIANCE = 1e-6


def _frames(feats):
    return np.asarray(getattr(feats, "frames", feats), dtype=float)


@dataclass
class TrellisResult:
    log_alpha: np.ndarray = None
    log_beta: np.ndarray = None
    total_log_likelihood: float = LOG_ZERO
    backward_total: float = None
    log_b: np.ndarray = None


@dataclass
class Occupancy:
    log_gamma: np.ndarray   # (L, S)
    log_xi: np.ndarray      # (L-1, A), over the composite's arcs
    log_final: np.ndarray   # (S,), occupancy of each exit arc at the last frame


def forward_log(hmm, feats, log_b=None):
    frames = _frames(feats)
    if frames.shape[0] < 1:
        raise UtteranceTooShortError("no frames")
    if log_b is None:
        log_b = hmm.emission_loglik(frames)
    trans = hmm.log_trans()
    n = frames.shape[0]
    alpha = np.empty((n, hmm.n_states))
    alpha[0] = hmm.log_init + log_b[0]
    for t in range(1, n):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + trans, axis=0) + log_b[t]
    total = logsumexp(alpha[-1] + hmm.log_final)
    if not np.isfinite(total):
        raise UtteranceTooShortError(
            f"{n} frames admit no complete path through {hmm.n_states} states")
    return TrellisResult(log_alpha=alpha, total_log_likelihood=total, log_b=log_b)


def backward_log(hmm, feats, log_b=None):
    frames = _frames(feats)
    if frames.shape[0] < 1:
        raise UtteranceTooShortError("no frames")
    if log_b is None:
        log_b = hmm.emission_loglik(frames)
    trans = hmm.log_trans()
    n = frames.shape[0]
    beta = np.empty((n, hmm.n_states))
    beta[-1] = hmm.log_final
    for t in range(n - 2, -1, -1):
        beta[t] = logsumexp(trans + (log_b[t + 1] + beta[t + 1])[None, :], axis=1)
    total = logsumexp(hmm.log_init + log_b[0] + beta[0])
    if not np.isfinite(total):
        raise UtteranceTooShortError(
            f"{n} frames admit no complete path through {hmm.n_states} states")
    return TrellisResult(log_beta=beta, total_log_likelihood=total, backward_total=total,
                         log_b=log_b)


def forward_backward(hmm, feats):
    fwd = forward_log(hmm, feats)
    bwd = backward_log(hmm, feats, log_b=fwd.log_b)
    return TrellisResult(fwd.log_alpha, bwd.log_beta, fwd.total_log_likelihood,
                         bwd.total_log_likelihood, fwd.log_b)


def occupancy(trellis, hmm):
    """State and arc occupation log-probabilities from a forward-backward pass."""
    alpha, beta = trellis.log_alpha, trellis.log_beta
    if alpha is None or beta is None or alpha.shape != beta.shape:
        raise InconsistentTrellisError("alpha and beta missing or of different shapes")
    if alpha.shape[1] != hmm.n_states:
        raise InconsistentTrellisError("trellis width does not match the HMM")
    total = trellis.total_log_likelihood
    if trellis.backward_total is not None:
        if abs(total - trellis.backward_total) > 1e-6 * max(1.0, abs(total)):
            raise InconsistentTrellisError(
                f"forward {total} and backward {trellis.backward_total} totals disagree")
    log_gamma = alpha + beta - total
    log_b = trellis.log_b
    log_xi = (alpha[:-1, hmm.arc_src] + hmm.arc_logp[None, :]
              + log_b[1:, hmm.arc_dst] + beta[1:, hmm.arc_dst] - total)
    log_final = alpha[-1] + hmm.log_final - total
    return Occupancy(log_gamma, log_xi, log_final)


# ---------------------------------------------------------------------------
# sufficient statistics

@dataclass
class PhoneStats:
    occ: np.ndarray         # (k,)
    x_sum: np.ndarray       # (k, d)
    x2_sum: np.ndarray      # (k, d)
    arc_occ: np.ndarray     # (k+2, k+2)
    state_occ: np.ndarray   # (k+2,), outgoing-arc mass per from-node

    @classmethod
    def zeros(cls, n_states, dim):
        k = n_states
        return cls(np.zeros(k), np.zeros((k, dim)), np.zeros((k, dim)),
                   np.zeros((k + 2, k + 2)), np.zeros(k + 2))

    def merged(self, other):
        return PhoneStats(self.occ + other.occ, self.x_sum + other.x_sum,
                          self.x2_sum + other.x2_sum, self.arc_occ + other.arc_occ,
                          self.state_occ + other.state_occ)


@dataclass
class Accumulator:
    stats: dict
    dim: int

    @classmethod
    def for_model(cls, model):
        return cls({p: PhoneStats.zeros(h.n_states, model.feature_dim)
                    for p, h in model.phones.items()}, model.feature_dim)

    def merge(self, other):
        """Field-wise sum; phones missing from one side count as zero."""
        stats = dict(self.stats)
        for p, s in other.stats.items():
            stats[p] = stats[p].merged(s) if p in stats else s
        return Accumulator(stats, self.dim)

    def total_occupancy(self):
        return float(sum(s.occ.sum() for s in self.stats.values()))

    def starved_states(self, min_occ=MIN_OCCUPANCY):
        return [(p, i + 1) for p, s in self.stats.items()
                for i in range(len(s.occ)) if s.occ[i] < min_occ]


def accumulate(occ, feats, hmm, acc):
    """Add one utterance's occupancy-weighted statistics into `acc` (in place)."""
    frames = _frames(feats)
    gamma = np.exp(occ.log_gamma)
    g_sum = gamma.sum(axis=0)
    gx = gamma.T @ frames
    gx2 = gamma.T @ (frames * frames)
    for j, (phone, i) in enumerate(zip(hmm.state_phone, hmm.state_index)):
        if phone not in acc.stats:
            raise UnmappedStateError(f"composite state {j} ({phone}) has no accumulator bin")
        s = acc.stats[phone]
        s.occ[i - 1] += g_sum[j]
        s.x_sum[i - 1] += gx[j]
        s.x2_sum[i - 1] += gx2[j]
    if hmm.arc_keys is None:
        raise UnmappedStateError("composite carries no arc-to-phone mapping")
    xi_sum = np.exp(occ.log_xi).sum(axis=0)
    for a, (phone, i, j) in enumerate(hmm.arc_keys):
        s = acc.stats[phone]
        s.arc_occ[i, j] += xi_sum[a]
        s.state_occ[i] += xi_sum[a]
    final = np.exp(occ.log_final)
    for j in np.nonzero(np.isfinite(hmm.log_final))[0]:
        phone, a, b = hmm.final_keys[j]
        s = acc.stats[phone]
        s.arc_occ[a, b] += final[j]
        s.state_occ[a] += final[j]
    return acc


def reestimate(acc, model, variance_floor):
    """M step. States or rows with (near-)zero occupancy keep their old values."""
    if acc.total_occupancy() <= 0.0:
        raise EmptyAccumulatorError("accumulator holds no occupancy")
    floor = np.broadcast_to(np.asarray(variance_floor, dtype=float), (model.feature_dim,))
    phones = {}
    for phone, hmm in model.phones.items():
        s = acc.stats.get(phone)
        if s is None:
            phones[phone] = hmm.copy()
            continue
        states = []
        for i, old in enumerate(hmm.states):
            if s.occ[i] < MIN_OCCUPANCY:
                states.append(GaussianState(old.mean, old.variance))
                continue
            mean = s.x_sum[i] / s.occ[i]
            var = np.maximum(s.x2_sum[i] / s.occ[i] - mean * mean, floor)
            states.append(GaussianState(mean, var))
        trans = hmm.log_trans.copy()
        mask = topology_mask(hmm.n_states)
        for i in range(1, hmm.n_states + 1):
            if s.state_occ[i] < MIN_OCCUPANCY:
                continue
            row = np.where(mask[i], s.arc_occ[i], 0.0)
            if row.sum() <= 0.0:
                continue
            trans[i] = safe_log(row / row.sum())
        phones[phone] = PhoneHmm(phone, states, trans)
    return AcousticModel(phones, model.feature_dim, model.frontend_fingerprint)


# ---------------------------------------------------------------------------
# EM driver

@dataclass
class TrainConfig:
    max_iters: int = 20
    # None disables the convergence test and always runs max_iters
    min_rel_ll_gain: float = 1e-4
    variance_floor_factor: float = 1e-3
    sil_policy: str = "boundary"
    n_states: int = N_STATES
    jobs: int = 1
    deterministic: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class IterationStat:
    iteration: int
    total_ll: float
    per_frame_ll: float
    n_frames: int


@dataclass
class TrainReport:
    iterations: list = field(default_factory=list)
    stop_reason: str = ""
    skipped_utterances: int = 0
    used_utterances: int = 0
    starved_states: list = field(default_factory=list)

    def per_frame(self):
        return [it.per_frame_ll for it in self.iterations]

    def is_monotone(self, tol=1e-6):
        pf = self.per_frame()
        return all(b >= a - tol for a, b in zip(pf, pf[1:]))

    def format_table(self):
        lines = [f"{'iter':>4}  {'total LL':>16}  {'per-frame LL':>14}"]
        for it in self.iterations:
            lines.append(f"{it.iteration:>4}  {it.total_ll:>16.4f}  {it.per_frame_ll:>14.6f}")
        lines.append(f"stop: {self.stop_reason}; utterances used {self.used_utterances}, "
                     f"skipped {self.skipped_utterances}")
        if self.starved_states:
            lines.append("occupancy-starved states kept at previous values: "
                         + ", ".join(f"{p}[{i}]" for p, i in self.starved_states))
        return "\n".join(lines)


def _estep(model, dictionary, items, sil_policy):
    acc = Accumulator.for_model(model)
    total = 0.0
    for frames, words in items:
        hmm = compose_utterance(words, dictionary, model, sil_policy=sil_policy)
        trellis = forward_backward(hmm, frames)
        accumulate(occupancy(trellis, hmm), frames, hmm, acc)
        total += trellis.total_log_likelihood
    return acc, total


def _estep_job(args):
    return _estep(*args)


def global_statistics(frame_blocks):
    stacked = np.vstack(frame_blocks)
    return stacked.mean(axis=0), stacked.var(axis=0)


def train(corpus, dictionary, phone_set, cfg=None, frontend_fingerprint="",
          on_iteration=None):
    """Flat start then Baum-Welch until `max_iters` or the gain drops below threshold.

    `corpus` is a list of (FeatureSequence or frame matrix, word-id list).
    `on_iteration(iteration, model)` is called after every M step.
    """
    cfg = cfg or TrainConfig()
    items = [(_frames(f), list(words)) for f, words in corpus]
    if not items:
        raise NoUsableUtterancesError("empty corpus")
    dim = items[0][0].shape[1]

    probe = flat_start(phone_set, dim, np.zeros(dim), np.ones(dim), n_states=cfg.n_states)
    usable, skipped = [], 0
    for frames, words in items:
        hmm = compose_utterance(words, dictionary, probe, sil_policy=cfg.sil_policy)
        if frames.shape[0] < hmm.min_frames():
            skipped += 1
            continue
        usable.append((frames, words))
    if not usable:
        raise NoUsableUtterancesError(f"all {skipped} utterances are too short for their HMMs")
    if skipped:
        log.warning("skipping %d utterances shorter than their HMM", skipped)

    g_mean, g_var = global_statistics([f for f, _ in usable])
    floor = np.maximum(cfg.variance_floor_factor * g_var, MIN_VARIANCE)
    model = flat_start(phone_set, dim, g_mean, g_var, variance_floor=floor,
                       n_states=cfg.n_states, frontend_fingerprint=frontend_fingerprint)
    n_frames = sum(f.shape[0] for f, _ in usable)
    report = TrainReport(skipped_utterances=skipped, used_utterances=len(usable))

    parallel = cfg.jobs > 1 and not cfg.deterministic and len(usable) > 1
    pool = ProcessPoolExecutor(cfg.jobs) if parallel else None
    try:
        for it in range(1, cfg.max_iters + 1):
            if pool is not None:
                chunks = [usable[k::cfg.jobs] for k in range(cfg.jobs)]
                parts = list(pool.map(_estep_job, [(model, dictionary, c, cfg.sil_policy)
                                                   for c in chunks if c]))
                acc, total = parts[0]
                for a, t in parts[1:]:
                    acc = acc.merge(a)
                    total += t
            else:
                acc, total = _estep(model, dictionary, usable, cfg.sil_policy)
            report.iterations.append(IterationStat(it, total, total / n_frames, n_frames))
            log.info("iteration %d: total LL %.4f, per frame %.6f", it, total, total / n_frames)
            model = reestimate(acc, model, floor)
            if on_iteration is not None:
                on_iteration(it, model)
            report.starved_states = acc.starved_states()
            if cfg.min_rel_ll_gain is not None and it > 1:
                prev = report.iterations[-2].per_frame_ll
                gain = (total / n_frames - prev) / abs(prev)
                if gain < cfg.min_rel_ll_gain:
                    report.stop_reason = f"converged (relative gain {gain:.2e})"
                    break
        else:
            report.stop_reason = f"reached {cfg.max_iters} iterations"
    finally:
        if pool is not None:
            pool.shutdown()
    return model, report
