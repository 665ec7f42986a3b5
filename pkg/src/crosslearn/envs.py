"""Environments: synthetic tabular instances, first-price auctions with
binary win feedback, and sleeping bandits with context-independent losses.

Every environment pre-draws its context sequence and any loss randomness at
construction time from its own stream, so the adversary is oblivious and a
run is reproducible from (spec, seed) alone. The learner-facing surface is:

    context(t)            realized context of round t (0-based)
    active_mask(context)  None (all arms) or a boolean (K,) mask
    reveal(t, arm)        LossFunction of the played arm, full context map
    loss_scalar(t, c, k)  realized loss value
    loss_column(t, c)     losses of all arms at context c (regret accounting)

Auction losses are affinely rescaled into [0, 1] as (1 - (v-b)*win)/2; the
harness multiplies reported auction regret by regret_scale = 2 to undo it.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from .accumulator import AFFINE, CONSTANT, TABULAR, AffineLoss, ConstantLoss, TabularLoss
from .baselines import KnownNuOracle


class EnvError(ValueError):
    pass


def auction_loss(value, bid, payment):
    """Rescaled first-price loss (1 - (value - bid) * win) / 2, win iff
    bid >= payment. Lies in [0, 1] for value, bid, payment in [0, 1]."""
    win = 1.0 if bid >= payment else 0.0
    return 0.5 * (1.0 - (value - bid) * win)


def _categorical(probs, n, gen):
    cs = np.cumsum(probs)
    return np.searchsorted(cs, gen.random(n) * cs[-1], side="right").astype(np.int64)


class TabularEnv:
    """Finite context space with a per-round loss tensor.

    Two storage modes: an explicit (T, K, C) tensor, or the structured form
    mu[k, c] + amp * u[t, k] with pre-drawn noise u in [-1, 1], which keeps
    memory at O(T*K) for long synthetic runs. Contexts are drawn iid from nu.
    """

    kind = "tabular"
    acc_kind = TABULAR
    regret_scale = 1.0
    grouping = "context"

    def __init__(self, nu, contexts, n_arms, tensor=None, mu=None, amp=0.0,
                 noise=None, active=None):
        self.nu = np.asarray(nu, dtype=float)
        self.n_contexts = self.nu.size
        self.contexts = np.asarray(contexts, dtype=np.int64)
        self.horizon = self.contexts.size
        self.n_arms = int(n_arms)
        self._tensor = tensor
        self._mu = mu
        self._amp = float(amp)
        self._noise = noise
        if (tensor is None) == (mu is None):
            raise EnvError("provide exactly one of tensor or mu")
        self.active = active
        for arr in (self._tensor, self._mu, self._noise, self.contexts):
            if arr is not None:
                arr.flags.writeable = False

    @classmethod
    def synthetic(cls, n_contexts, n_arms, horizon, rng, gap=0.7, noise=0.15,
                  nu="uniform", active=None):
        """Instance with per-context distinct best arms: arm c mod K has
        mean (1-gap)/2 at context c, every other arm (1+gap)/2, plus
        per-round per-arm noise shared across contexts."""
        if gap <= 0 or gap >= 1:
            raise EnvError("gap must lie in (0, 1)")
        lo, hi = (1.0 - gap) / 2.0, (1.0 + gap) / 2.0
        if noise > min(lo, 1.0 - hi):
            raise EnvError("noise amplitude pushes losses outside [0, 1]")
        if isinstance(nu, str) and nu == "uniform":
            nu = np.full(n_contexts, 1.0 / n_contexts)
        else:
            nu = np.asarray(nu, dtype=float)
            nu = nu / nu.sum()
        gen = rng.gen
        mu = np.full((n_arms, n_contexts), hi)
        cols = np.arange(n_contexts)
        mu[cols % n_arms, cols] = lo
        contexts = _categorical(nu, horizon, gen)
        u = gen.uniform(-1.0, 1.0, size=(horizon, n_arms))
        return cls(nu, contexts, n_arms, mu=mu, amp=noise, noise=u, active=active)

    @classmethod
    def from_tensor(cls, tensor, nu, rng, active=None):
        tensor = np.asarray(tensor, dtype=float)
        if tensor.ndim != 3:
            raise EnvError("tensor must have shape (T, K, C)")
        if tensor.min() < 0 or tensor.max() > 1:
            raise EnvError("losses must lie in [0, 1]")
        horizon, n_arms, n_contexts = tensor.shape
        nu = np.asarray(nu, dtype=float)
        if nu.size != n_contexts:
            raise EnvError("nu length does not match the tensor")
        contexts = _categorical(nu, horizon, rng.gen)
        return cls(nu, contexts, n_arms, tensor=tensor, active=active)

    @classmethod
    def from_csv(cls, path, nu, rng, active=None):
        """Load a loss tensor from rows t,k,c,value (header optional)."""
        entries = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip().lstrip("-").isdigit():
                    continue
                t, k, c, v = int(row[0]), int(row[1]), int(row[2]), float(row[3])
                entries.append((t, k, c, v))
        if not entries:
            raise EnvError(f"no loss rows found in {path}")
        T = max(e[0] for e in entries) + 1
        K = max(e[1] for e in entries) + 1
        C = max(e[2] for e in entries) + 1
        tensor = np.zeros((T, K, C))
        seen = np.zeros((T, K, C), dtype=bool)
        for t, k, c, v in entries:
            tensor[t, k, c] = v
            seen[t, k, c] = True
        if not seen.all():
            raise EnvError("loss tensor has missing (t, k, c) entries")
        return cls.from_tensor(tensor, nu, rng, active=active)

    def context(self, t):
        return int(self.contexts[t])

    def active_mask(self, context):
        return None if self.active is None else self.active[context]

    def reveal(self, t, arm):
        m = self.active_mask(self.contexts[t])
        if m is not None and not m[arm]:
            raise EnvError(f"arm {arm} inactive at context {self.contexts[t]}")
        if self._tensor is not None:
            return TabularLoss(self._tensor[t, arm], validate=False)
        row = self._mu[arm] + self._amp * self._noise[t, arm]
        return TabularLoss(row, validate=False)

    def loss_scalar(self, t, context, arm):
        if self._tensor is not None:
            return float(self._tensor[t, arm, context])
        return float(self._mu[arm, context] + self._amp * self._noise[t, arm])

    def loss_column(self, t, context):
        if self._tensor is not None:
            return self._tensor[t, :, context]
        return self._mu[:, context] + self._amp * self._noise[t]

    def known_nu_oracle(self):
        return KnownNuOracle.finite(self.nu, self.active)

    def export_contexts(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "context"])
            for t, c in enumerate(self.contexts):
                w.writerow([t, int(c)])


def _value_sampler(spec, n, gen):
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return gen.random(n), (lambda x: np.clip(x, 0.0, 1.0)), None
    if kind == "beta":
        a, b = float(spec["a"]), float(spec["b"])
        from scipy.stats import beta as beta_dist

        return gen.beta(a, b, n), (lambda x: beta_dist.cdf(x, a, b)), None
    if kind == "discrete":
        atoms = np.asarray(spec["atoms"], dtype=float)
        probs = np.asarray(spec["probs"], dtype=float)
        probs = probs / probs.sum()
        idx = _categorical(probs, n, gen)
        return atoms[idx], None, (atoms, probs)
    raise EnvError(f"unknown value distribution {kind!r}")


def _payment_sequence(spec, n, gen):
    kind = spec.get("kind", "iid_uniform")
    if kind == "iid_uniform":
        lo, hi = float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0))
        return lo + (hi - lo) * gen.random(n)
    if kind == "iid_beta":
        return gen.beta(float(spec["a"]), float(spec["b"]), n)
    if kind == "iid_discrete":
        atoms = np.asarray(spec["atoms"], dtype=float)
        probs = np.asarray(spec["probs"], dtype=float)
        probs = probs / probs.sum()
        return atoms[_categorical(probs, n, gen)]
    if kind == "periodic":
        pattern = np.asarray(spec["pattern"], dtype=float)
        return np.tile(pattern, n // pattern.size + 1)[:n]
    if kind == "drift":
        base = float(spec.get("base", 0.5))
        amplitude = float(spec.get("amplitude", 0.3))
        period = float(spec.get("period", max(n // 4, 1)))
        noise = float(spec.get("noise", 0.02))
        t = np.arange(n)
        m = base + amplitude * np.sin(2.0 * math.pi * t / period)
        m = m + noise * gen.standard_normal(n)
        return np.clip(m, 0.0, 1.0)
    raise EnvError(f"unknown payment process {kind!r}")


class AuctionEnv:
    """Repeated first-price auction: context is the private value v_t drawn
    iid, arms are the grid bids {0, 1/K, ..., (K-1)/K}, and the only
    information in the feedback is whether the bid won against the oblivious
    payment m_t. Default K is ceil(T^(1/3))."""

    kind = "auction"
    acc_kind = AFFINE
    regret_scale = 2.0

    def __init__(self, values, payments, n_arms, value_cdf=None, atoms=None):
        self.values = np.asarray(values, dtype=float)
        self.payments = np.asarray(payments, dtype=float)
        self.horizon = self.values.size
        self.n_arms = int(n_arms)
        self.bids = np.arange(self.n_arms) / self.n_arms
        self._value_cdf = value_cdf
        self._atoms = atoms
        self.grouping = "value" if atoms is not None else "round"
        for arr in (self.values, self.payments, self.bids):
            arr.flags.writeable = False

    @classmethod
    def generate(cls, horizon, rng, values=None, payments=None, n_arms=None):
        gen = rng.gen
        values = values or {"kind": "uniform"}
        payments = payments or {"kind": "iid_uniform"}
        if n_arms is None:
            n_arms = math.ceil(horizon ** (1.0 / 3.0))
        v, cdf, atoms = _value_sampler(values, horizon, gen)
        m = _payment_sequence(payments, horizon, gen)
        return cls(v, m, n_arms, value_cdf=cdf, atoms=atoms)

    def context(self, t):
        return float(self.values[t])

    def active_mask(self, context):
        return None

    def reveal(self, t, arm):
        if not 0 <= arm < self.n_arms:
            raise EnvError(f"arm {arm} outside the bid grid")
        b = self.bids[arm]
        if b >= self.payments[t]:
            return AffineLoss((1.0 + b) / 2.0, -0.5, validate=False)
        return AffineLoss(0.5, 0.0, validate=False)

    def loss_scalar(self, t, context, arm):
        return auction_loss(context, self.bids[arm], self.payments[t])

    def loss_column(self, t, context):
        win = self.bids >= self.payments[t]
        return 0.5 * (1.0 - (context - self.bids) * win)

    def known_nu_oracle(self, n_nodes=512):
        if self._atoms is not None:
            atoms, probs = self._atoms
            oracle = KnownNuOracle(atoms, probs)
            return oracle
        return KnownNuOracle.quadrature(self._value_cdf, n_nodes)

    def export_payments(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "payment"])
            for t, m in enumerate(self.payments):
                w.writerow([t, repr(float(m))])


def subset_to_mask(bitmask, n_arms):
    return (bitmask >> np.arange(n_arms)) & 1 == 1


class SleepingEnv:
    """Sleeping bandits: the context is the set of available arms, encoded
    as a bitmask, and losses do not depend on the context. Cross-learning
    over subsets turns per-subset regret into per-arm regret."""

    kind = "sleeping"
    acc_kind = CONSTANT
    regret_scale = 1.0
    grouping = "context"

    def __init__(self, losses, subsets, subset_probs=None):
        self.losses = np.asarray(losses, dtype=float)
        self.subsets = np.asarray(subsets, dtype=np.int64)
        self.horizon, self.n_arms = self.losses.shape
        self._subset_probs = subset_probs
        self._mask_cache = {}
        for arr in (self.losses, self.subsets):
            arr.flags.writeable = False

    @classmethod
    def generate(cls, horizon, n_arms, rng, availability=None, losses=None):
        gen = rng.gen
        availability = availability or {"kind": "bernoulli", "probs": [0.5] * n_arms}
        losses = losses or {"kind": "means_noise"}
        akind = availability.get("kind", "bernoulli")
        if akind == "bernoulli":
            probs = np.asarray(availability["probs"], dtype=float)
            if probs.size != n_arms:
                raise EnvError("availability probs must have length K")
            subsets = np.empty(horizon, dtype=np.int64)
            bits = 1 << np.arange(n_arms)
            for t in range(horizon):
                while True:
                    draw = gen.random(n_arms) < probs
                    if draw.any():
                        break
                subsets[t] = int(bits[draw].sum())
            subset_probs = None
            if n_arms <= 16:
                subset_probs = cls._bernoulli_subset_probs(probs)
        elif akind == "categorical":
            masks = [int(sum(1 << k for k in subset)) for subset in availability["subsets"]]
            if any(m == 0 for m in masks):
                raise EnvError("empty availability subset")
            probs = np.asarray(availability["probs"], dtype=float)
            idx = _categorical(probs, horizon, gen)
            subsets = np.asarray(masks, dtype=np.int64)[idx]
            subset_probs = (np.asarray(masks, dtype=np.int64), probs / probs.sum())
        else:
            raise EnvError(f"unknown availability {akind!r}")
        lkind = losses.get("kind", "means_noise")
        if lkind == "iid_uniform":
            table = gen.random((horizon, n_arms))
        elif lkind == "means_noise":
            means = losses.get("means")
            means = (np.linspace(0.15, 0.85, n_arms) if means is None
                     else np.asarray(means, dtype=float))
            amp = float(losses.get("amp", 0.1))
            table = np.clip(means[None, :] + amp * gen.uniform(-1, 1, (horizon, n_arms)),
                            0.0, 1.0)
        else:
            raise EnvError(f"unknown loss model {lkind!r}")
        return cls(table, subsets, subset_probs=subset_probs)

    @staticmethod
    def _bernoulli_subset_probs(probs):
        n_arms = probs.size
        masks = np.arange(1, 1 << n_arms, dtype=np.int64)
        p = np.ones(masks.size)
        for k in range(n_arms):
            has = (masks >> k) & 1 == 1
            p *= np.where(has, probs[k], 1.0 - probs[k])
        return masks, p / p.sum()

    def context(self, t):
        return int(self.subsets[t])

    def active_mask(self, context):
        m = self._mask_cache.get(context)
        if m is None:
            m = subset_to_mask(context, self.n_arms)
            m.flags.writeable = False
            self._mask_cache[context] = m
        return m

    def reveal(self, t, arm):
        if not subset_to_mask(self.subsets[t], self.n_arms)[arm]:
            raise EnvError(f"arm {arm} is asleep in round {t}")
        return ConstantLoss(self.losses[t, arm], validate=False)

    def loss_scalar(self, t, context, arm):
        return float(self.losses[t, arm])

    def loss_column(self, t, context):
        return self.losses[t]

    def known_nu_oracle(self):
        if self._subset_probs is None:
            raise EnvError("exact subset distribution unavailable (K too large)")
        masks, probs = self._subset_probs
        mask_matrix = np.stack([subset_to_mask(int(m), self.n_arms) for m in masks])
        return KnownNuOracle(masks, probs, mask_matrix)


class RegretTracker:
    """Streaming hindsight-regret accounting against the best context-to-arm
    mapping on the realized prefix. Grouping modes: "context" keys rounds by
    the realized context, "value" by the realized scalar value, and "round"
    treats every round as its own group (continuous values, a.s. unique)."""

    def __init__(self, env):
        self.env = env
        self.played = 0.0
        self._mode = env.grouping
        if self._mode == "context" and env.kind == "tabular":
            self._table = np.zeros((env.n_contexts, env.n_arms))
            self._visited = np.zeros(env.n_contexts, dtype=bool)
        elif self._mode == "round":
            self._best = 0.0
        else:
            self._groups = {}

    def update(self, t, context, arm):
        env = self.env
        self.played += env.loss_scalar(t, context, arm)
        col = env.loss_column(t, context)
        if self._mode == "round":
            mask = env.active_mask(context)
            self._best += float(col.min() if mask is None else col[mask].min())
        elif self._mode == "context" and env.kind == "tabular":
            self._table[context] += col
            self._visited[context] = True
        else:
            row = self._groups.get(context)
            if row is None:
                row = np.zeros(env.n_arms)
                self._groups[context] = row
            row += col

    def comparator(self):
        env = self.env
        if self._mode == "round":
            return self._best
        if self._mode == "context" and env.kind == "tabular":
            total = 0.0
            for c in np.flatnonzero(self._visited):
                mask = env.active_mask(c)
                row = self._table[c]
                total += float(row.min() if mask is None else row[mask].min())
            return total
        total = 0.0
        for context, row in self._groups.items():
            mask = env.active_mask(context)
            total += float(row.min() if mask is None else row[mask].min())
        return total

    def regret(self):
        """Raw (unscaled) regret of the prefix seen so far."""
        return self.played - self.comparator()


def hindsight_regret(history, env):
    """Regret of a played history [(context, arm), ...] against the best
    fixed context-to-arm mapping on that history (raw loss units)."""
    tracker = RegretTracker(env)
    for t, (context, arm) in enumerate(history):
        tracker.update(t, context, arm)
    return tracker.regret()
