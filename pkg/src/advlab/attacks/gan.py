"""
GAN whose discriminator carries a second head that predicts which feature
transformation was applied to its input.

Losses, with P the real/fake head (index 1 = real) and Q the change head:

    V      = -E_real[log P(S=1|x)] - E_fake[log P(S=0|x)]
    L(D)   =  V - beta  * E_real E_r[log Q(r | T_r x)]
    L(G)   = -V - alpha * E_fake E_r[log Q(r | T_r x)]

V is written as the discriminator's cross-entropy so that both players
*minimise* their loss with the signs above. Expectations over the change set
are exact (every transformation is applied to every sample).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..data import Dataset
from ..errors import ConfigurationError, DataError, TrainingDivergedError
from .base import PerturbedSet

REAL, FAKE = 1, 0
BASE_CHANGES = ("identity", "reverse", "negate", "permute")


@dataclass(frozen=True)
class GanConfig:
    generator_epochs: int = 2000
    discriminator_epochs: int = 3
    alpha: float = 0.2
    beta: float = 1.0
    latent_dim: int = 20
    change_set_size: int = 4
    hidden: int = 32
    batch_size: int = 32
    learning_rate: float = 1e-3
    instance_noise: float = 0.1
    ema_decay: float = 0.995
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if self.generator_epochs < 0 or self.discriminator_epochs < 0:
            raise ConfigurationError("epoch budgets must be >= 0")
        if self.latent_dim < 1 or self.change_set_size < 1 or self.hidden < 1:
            raise ConfigurationError("latent_dim, change_set_size and hidden must be >= 1")
        if self.batch_size < 1 or not self.learning_rate > 0:
            raise ConfigurationError("batch_size must be >= 1 and learning_rate > 0")
        if self.instance_noise < 0 or not 0.0 <= self.ema_decay < 1.0:
            raise ConfigurationError("instance_noise must be >= 0 and ema_decay in [0, 1)")


class ChangeSet:
    """Invertible feature transformations: x -> x[perm], optionally mirrored to 1 - x.

    The first four are identity, order reversal, mirroring about 0.5 and a
    seeded permutation; larger sets add further seeded permutations.
    """

    def __init__(self, size, feature_count, seed):
        rng = np.random.default_rng(seed)
        m = feature_count
        base = [(np.arange(m), False), (np.arange(m)[::-1].copy(), False),
                (np.arange(m), True), (rng.permutation(m), False)]
        self.names = list(BASE_CHANGES[:size])
        self.transforms = base[:size]
        while len(self.transforms) < size:
            self.names.append(f"permute_{len(self.transforms)}")
            self.transforms.append((rng.permutation(m), False))

    def __len__(self):
        return len(self.transforms)

    def apply(self, r, x):
        perm, mirror = self.transforms[r]
        y = x[:, perm]
        return 1.0 - y if mirror else y

    def apply_all(self, x):
        """Stack every transformation of ``x``; returns (stacked, change labels)."""
        stacked = np.vstack([self.apply(r, x) for r in range(len(self))])
        return stacked, np.repeat(np.arange(len(self)), len(x))

    def backprop_all(self, grad, n):
        out = np.zeros((n, grad.shape[1]))
        for r, (perm, mirror) in enumerate(self.transforms):
            g = grad[r * n:(r + 1) * n]
            out[:, perm] += -g if mirror else g
        return out


@dataclass(eq=False)
class GanModel:
    generator: nn.ModelParams
    trunk: nn.ModelParams
    p_head: nn.ModelParams
    q_head: nn.ModelParams
    changes: ChangeSet
    config: GanConfig
    reference: np.ndarray = None
    feature_names: tuple = ()
    label_names: tuple = ()
    history: list = field(default_factory=list)
    averaged: nn.ModelParams = None

    @property
    def feature_count(self):
        return self.generator.output_width

    def sampler(self):
        """Weight-averaged generator when averaging is on, else the raw generator."""
        return self.averaged if self.averaged is not None else self.generator

    def generate(self, z):
        return self.sampler().forward(z)

    def real_probability(self, x):
        """P(S=1 | x), clamped into the open unit interval."""
        p = self.p_head.forward(self.trunk.forward(x))[:, REAL]
        return np.clip(p, nn.PROB_FLOOR, 1.0 - nn.PROB_FLOOR)

    def change_probabilities(self, x):
        return self.q_head.forward(self.trunk.forward(x))


def build_gan(feature_count, config):
    h, m = config.hidden, feature_count
    seeds = np.random.default_rng(config.seed).integers(0, 2**31, size=5)
    gen = nn.build_network([nn.dense(config.latent_dim, h), nn.relu(), nn.dense(h, h), nn.relu(),
                            nn.dense(h, m)], int(seeds[0]))
    trunk = nn.build_network([nn.dense(m, h), nn.relu(), nn.dense(h, h), nn.relu()], int(seeds[1]))
    p_head = nn.build_network([nn.dense(h, 2), nn.softmax()], int(seeds[2]))
    q_head = nn.build_network([nn.dense(h, config.change_set_size), nn.softmax()], int(seeds[3]))
    return GanModel(gen, trunk, p_head, q_head,
                    ChangeSet(config.change_set_size, m, int(seeds[4])), config)


def _head_pass(gan, head, x):
    """Forward trunk + head up to logits; returns (probs, caches)."""
    h, tc = gan.trunk.forward_cached(x)
    logits, hc = head.forward_cached(h, len(head.layers) - 1)
    return nn._softmax(logits), (tc, hc)


def _head_backprop(gan, head, caches, d_logits, input_shape):
    tc, hc = caches
    head_grads, d_h = head.backprop(hc, d_logits)
    trunk_grads, d_x = gan.trunk.backprop(tc, d_h, input_shape)
    return head_grads, trunk_grads, d_x


def _mean_log(p):
    return float(np.mean(np.log(np.maximum(p, nn.PROB_FLOOR))))


def _onehot(labels, k):
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def compose_losses(log_p_real, log_p_fake, log_q_real, log_q_fake, alpha, beta):
    value = -(log_p_real + log_p_fake)
    return {"value": value,
            "loss_d": value - beta * log_q_real,
            "loss_g": -value - alpha * log_q_fake}


def gan_losses(gan, real, z, alpha=None, beta=None):
    """Every loss term for one (real batch, latent batch) pair, without updating anything."""
    alpha = gan.config.alpha if alpha is None else alpha
    beta = gan.config.beta if beta is None else beta
    fake = gan.generate(z)
    p_real = _head_pass(gan, gan.p_head, real)[0]
    p_fake = _head_pass(gan, gan.p_head, fake)[0]
    tr, rr = gan.changes.apply_all(real)
    tf, rf = gan.changes.apply_all(fake)
    q_real = _head_pass(gan, gan.q_head, tr)[0]
    q_fake = _head_pass(gan, gan.q_head, tf)[0]
    terms = {
        "log_p_real": _mean_log(p_real[:, REAL]),
        "log_p_fake": _mean_log(p_fake[:, FAKE]),
        "log_q_real": _mean_log(q_real[np.arange(len(rr)), rr]),
        "log_q_fake": _mean_log(q_fake[np.arange(len(rf)), rf]),
    }
    terms.update(compose_losses(terms["log_p_real"], terms["log_p_fake"], terms["log_q_real"],
                                terms["log_q_fake"], alpha, beta))
    return terms


def _add(acc, grads):
    if acc is None:
        return [None if g is None else (g[0].copy(), g[1].copy()) for g in grads]
    for i, g in enumerate(grads):
        if g is not None:
            acc[i] = (acc[i][0] + g[0], acc[i][1] + g[1])
    return acc


def _discriminator_step(gan, real, fake, opt):
    cfg = gan.config
    n_r, n_f = len(real), len(fake)
    p_real, c_real = _head_pass(gan, gan.p_head, real)
    p_fake, c_fake = _head_pass(gan, gan.p_head, fake)
    tr, rr = gan.changes.apply_all(real)
    q_real, c_q = _head_pass(gan, gan.q_head, tr)
    log_p_real = _mean_log(p_real[:, REAL])
    log_p_fake = _mean_log(p_fake[:, FAKE])
    log_q_real = _mean_log(q_real[np.arange(len(rr)), rr])

    hp1, t1, _ = _head_backprop(gan, gan.p_head, c_real,
                                (p_real - _onehot(np.full(n_r, REAL), 2)) / n_r, real.shape)
    hp2, t2, _ = _head_backprop(gan, gan.p_head, c_fake,
                                (p_fake - _onehot(np.full(n_f, FAKE), 2)) / n_f, fake.shape)
    hq, t3, _ = _head_backprop(gan, gan.q_head, c_q,
                               cfg.beta * (q_real - _onehot(rr, len(gan.changes))) / len(rr),
                               tr.shape)
    opt.step(gan.p_head, _add(_add(None, hp1), hp2))
    opt.step(gan.q_head, hq)
    opt.step(gan.trunk, _add(_add(_add(None, t1), t2), t3))
    return log_p_real, log_p_fake, log_q_real


def _generator_step(gan, real, z, opt, noise=None):
    cfg = gan.config
    n = len(z)
    fake, g_cache = gan.generator.forward_cached(z)
    if noise is not None:
        real = real + noise
        fake = fake + noise
    p_real = _head_pass(gan, gan.p_head, real)[0]
    p_fake, c_fake = _head_pass(gan, gan.p_head, fake)
    tf, rf = gan.changes.apply_all(fake)
    q_fake, c_q = _head_pass(gan, gan.q_head, tf)
    log_p_real = _mean_log(p_real[:, REAL])
    log_p_fake = _mean_log(p_fake[:, FAKE])
    log_q_fake = _mean_log(q_fake[np.arange(len(rf)), rf])

    # d/dlogits of +mean log P(S=0|fake)
    _, _, d_fake = _head_backprop(gan, gan.p_head, c_fake,
                                  (_onehot(np.full(n, FAKE), 2) - p_fake) / n, fake.shape)
    _, _, d_tf = _head_backprop(gan, gan.q_head, c_q,
                                cfg.alpha * (q_fake - _onehot(rf, len(gan.changes))) / len(rf),
                                tf.shape)
    d_fake = d_fake + gan.changes.backprop_all(d_tf, n)
    g_grads, _ = gan.generator.backprop(g_cache, d_fake, z.shape)
    opt.step(gan.generator, g_grads)
    return log_p_real, log_p_fake, log_q_fake


def train_gan(train_set, config):
    """Alternate discriminator and generator updates for ``generator_epochs`` rounds.

    Each round runs ``discriminator_epochs`` discriminator updates and then one
    generator update, each on a fresh minibatch. Every update's loss terms are
    logged in ``GanModel.history``.
    """
    x = np.asarray(getattr(train_set, "features", train_set), dtype=np.float64)
    if len(x) == 0:
        raise DataError("GAN training needs a nonempty dataset")
    gan = build_gan(x.shape[1], config)
    gan.reference = x.copy()
    gan.feature_names = tuple(getattr(train_set, "feature_names", ()))
    gan.label_names = tuple(getattr(train_set, "label_names", ()))
    if config.ema_decay:
        gan.averaged = gan.generator.copy()
    rng = np.random.default_rng(config.seed)
    opt_d = nn.Adam(config.learning_rate)
    opt_g = nn.Adam(config.learning_rate)
    bs = min(config.batch_size, len(x))
    for epoch in range(config.generator_epochs):
        for _ in range(config.discriminator_epochs):
            real = x[rng.choice(len(x), size=bs, replace=False)]
            fake = gan.generator.forward(rng.normal(size=(bs, config.latent_dim)))
            if config.instance_noise:
                real = real + rng.normal(scale=config.instance_noise, size=real.shape)
                fake = fake + rng.normal(scale=config.instance_noise, size=fake.shape)
            lpr, lpf, lqr = _discriminator_step(gan, real, fake, opt_d)
            loss = compose_losses(lpr, lpf, lqr, 0.0, config.alpha, config.beta)["loss_d"]
            _check(loss, epoch)
            gan.history.append({"epoch": epoch, "step": "D", "log_p_real": lpr,
                                "log_p_fake": lpf, "log_q_real": lqr, "loss": loss})
        real = x[rng.choice(len(x), size=bs, replace=False)]
        noise = (rng.normal(scale=config.instance_noise, size=(bs, x.shape[1]))
                 if config.instance_noise else None)
        lpr, lpf, lqf = _generator_step(gan, real, rng.normal(size=(bs, config.latent_dim)),
                                        opt_g, noise)
        if gan.averaged is not None:
            _ema_update(gan.averaged, gan.generator, config.ema_decay)
        loss = compose_losses(lpr, lpf, 0.0, lqf, config.alpha, config.beta)["loss_g"]
        _check(loss, epoch)
        gan.history.append({"epoch": epoch, "step": "G", "log_p_real": lpr,
                            "log_p_fake": lpf, "log_q_fake": lqf, "loss": loss})
    return gan


def _ema_update(avg, live, decay):
    for i, w in enumerate(live.weights):
        if w is None:
            continue
        avg.weights[i] = decay * avg.weights[i] + (1 - decay) * w
        avg.biases[i] = decay * avg.biases[i] + (1 - decay) * live.biases[i]


def _check(loss, epoch):
    if not np.isfinite(loss):
        raise TrainingDivergedError(epoch, loss, where="GAN training")


def gself_mds_attack(gan, count, seed, label=1, id_start=0):
    """Draw ``count`` generator samples, clip them to the unit box and label them ``label``."""
    m = gan.feature_count
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(count, gan.config.latent_dim))
    fakes = np.clip(gan.generate(z), 0.0, 1.0) if count else np.zeros((0, m))
    samples = Dataset(fakes, np.full(count, label, dtype=np.int64),
                      np.arange(id_start, id_start + count), 2, gan.label_names,
                      gan.feature_names)
    if count and gan.reference is not None and len(gan.reference):
        # distance to the nearest real training sample stands in for a perturbation size
        diff = np.abs(fakes[:, None, :] - gan.reference[None, :, :])
        linf = diff.max(axis=2).min(axis=1)
        l2 = np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)
    else:
        linf = l2 = np.zeros(count)
    return PerturbedSet(samples, np.full(count, -1), ("GSelf-MDS",) * count, linf, l2)
