"""Training loops: VGAN, variational contrastive divergence, and a GAN baseline."""
from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .config import LOOPS, ConfigError, TrainConfig
from .data import Dataset, minibatches
from .energy import EnergyModel, GanEnergyHead, batch_entropy_from_preact, gan_energy_from_logit, poe_energy_from_preact
from .generator import DirectGenerator, TransitionGenerator, sample_noise, transition_sample, vcd_generator_loss
from .ndiff import Adadelta, NonFiniteError, save_checkpoint

log = logging.getLogger(__name__)

LOG_FIELDS = ("iteration", "epoch", "energy_data", "energy_gen", "entropy_gen", "entropy_data",
              "energy_loss", "gen_loss", "recon_mse", "gen_steps")


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; the models hold the last good epoch's parameters."""


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    gen_records: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def column(self, name):
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            for r in self.records:
                w.writerow([_fmt(r[k]) for k in LOG_FIELDS])

    def gen_steps_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("iteration", "step", "gen_loss"))
            for r in self.gen_records:
                w.writerow([r["iteration"], r["step"], _fmt(r["gen_loss"])])

    def timing_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("iteration", "wall_time"))
            for i, t in enumerate(self.wall_time):
                w.writerow([i, f"{t:.6f}"])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


# --------------------------------------------------------------------------
# model construction


def _is_image(shape):
    return shape[1] > 1


def build_phi(cfg: TrainConfig, data_shape, rng=None):
    kind = cfg.model_phi
    if kind == "auto":
        kind = "conv" if _is_image(data_shape) else "mlp"
    if kind == "conv":
        return nets.conv_features(data_shape, nets.parse_sizes(cfg.model_channels), cfg.model_d_phi, rng=rng)
    if kind == "mlp":
        return nets.mlp(data_shape, nets.parse_sizes(cfg.model_hidden), cfg.model_d_phi, out="relu", rng=rng)
    raise ValueError(f"model.phi must be auto, conv or mlp, got {kind!r}")


def build_energy(cfg, data_shape, rng):
    return EnergyModel(build_phi(cfg, data_shape), cfg.model_K, rng=rng)


def build_discriminator(cfg, data_shape, rng):
    return GanEnergyHead(build_phi(cfg, data_shape), rng=rng)


def build_generator(cfg, data_shape, rng):
    if _is_image(data_shape):
        hidden = nets.parse_sizes(cfg.gen_hidden)[0]
        net = nets.deconv_decoder(cfg.gen_dz, hidden, nets.parse_sizes(cfg.gen_channels), data_shape,
                                  out="sigmoid", batchnorm=cfg.gen_batchnorm, rng=rng)
    else:
        flat = int(np.prod(data_shape))
        net = nets.mlp((cfg.gen_dz,), nets.parse_sizes(cfg.gen_hidden), flat, out="linear",
                       batchnorm=cfg.gen_batchnorm, out_shape=data_shape, rng=rng)
    return DirectGenerator(net)


def build_transition(cfg, data_shape, rng):
    if _is_image(data_shape):
        encoder = nets.conv_features(data_shape, nets.parse_sizes(cfg.model_channels), cfg.vcd_d, out="tanh", rng=rng)
        decoder = nets.deconv_decoder(cfg.vcd_d, cfg.vcd_hidden, nets.parse_sizes(cfg.gen_channels), data_shape,
                                      out="sigmoid", batchnorm=cfg.gen_batchnorm, rng=rng)
    else:
        flat = int(np.prod(data_shape))
        hidden = nets.parse_sizes(cfg.gen_hidden)
        encoder = nets.mlp(data_shape, hidden, cfg.vcd_d, out="tanh", rng=rng)
        decoder = nets.mlp((cfg.vcd_d,), hidden, flat, out="linear", batchnorm=cfg.gen_batchnorm,
                           out_shape=data_shape, rng=rng)
    return TransitionGenerator(encoder, decoder)


def seeded_rngs(seed):
    """Independent (init, data, noise) generators derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def checkpoint_tensors(energy, gen):
    out = {"energy." + k: v for k, v in energy.state().items()}
    out.update({"gen." + k: v for k, v in gen.state().items()})
    return out


def restore(energy, gen, tensors):
    energy.load_state(tensors, "energy.")
    gen.load_state(tensors, "gen.")


def _optimizer(params, cfg):
    return Adadelta(params, lr=cfg.opt_lr, decay=cfg.opt_decay, eps=cfg.opt_eps)


def _check(value, what):
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite {what}")
    return value


# --------------------------------------------------------------------------
# single steps


def vgan_generator_step(energy, gen, opt, n, rng):
    """One Adadelta step minimising ``mean E(G(z)) - H~(p_g)`` over the generator.

    Returns a dict with the loss (before the step) and its parts.
    """
    z = sample_noise(n, gen.dz, rng)
    x = gen.generate(z, "train")
    a = energy.preactivations(x, "train")
    e, de = poe_energy_from_preact(a)
    h, dh = batch_entropy_from_preact(a)
    loss = _check(float(e.mean()) - h, "generator loss")
    _, dx = energy.backward(de / n - dh)
    opt.step(gen.backward(dx))
    return {"gen_loss": loss, "energy_gen": float(e.mean()), "entropy_gen": h}


def energy_objective(energy, x_data, x_gen, mode="train"):
    """``mean E(x_data) - mean E(x_gen) - H~(p_data)`` plus its pre-activation gradient.

    Both batches pass through ``phi`` as one stacked batch; ``phi`` has no
    batch normalization, so the per-sample energies do not depend on the mix.
    """
    nd, ng = len(x_data), len(x_gen)
    a = energy.preactivations(np.concatenate([x_data, x_gen]), mode)
    e, de = poe_energy_from_preact(a)
    h, dh = batch_entropy_from_preact(a[:nd])
    ed, eg = float(e[:nd].mean()), float(e[nd:].mean())
    d_a = np.concatenate([de[:nd] / nd - dh, -de[nd:] / ng])
    stats = {"energy_data": ed, "energy_gen": eg, "entropy_data": h, "energy_loss": ed - eg - h}
    return stats, d_a


def vgan_energy_step(energy, x_data, x_gen, opt):
    """One Adadelta descent step of the energy on ``energy_objective``."""
    stats, d_a = energy_objective(energy, x_data, x_gen)
    _check(stats["energy_loss"], "energy loss")
    grads, _ = energy.backward(d_a)
    opt.step(grads)
    return stats


def vcd_generator_step(energy, g, x, rho, opt, rng, entropy=True):
    loss, grads, stats = vcd_generator_loss(energy, g, x, rho, rng, entropy=entropy)
    _check(loss, "generator loss")
    opt.step(grads)
    stats["gen_loss"] = loss
    return stats


def gan_discriminator_step(disc, x_data, x_gen, opt):
    """Descend ``mean -log D(x) + mean -log(1 - D(G(z)))``."""
    nd, ng = len(x_data), len(x_gen)
    logit = disc.preactivations(np.concatenate([x_data, x_gen]), "train")[:, 0]
    e_data, de_data = gan_energy_from_logit(logit[:nd])
    # -log(1 - sigmoid(t)) = -log sigmoid(-t)
    e_fake, de_fake = gan_energy_from_logit(-logit[nd:])
    loss = _check(float(e_data.mean() + e_fake.mean()), "discriminator loss")
    d = np.concatenate([de_data / nd, -de_fake / ng])[:, None]
    grads, _ = disc.backward(d)
    opt.step(grads)
    e_gen = gan_energy_from_logit(logit[nd:])[0]
    return {"energy_data": float(e_data.mean()), "energy_gen": float(e_gen.mean()), "energy_loss": loss}


def gan_generator_step(disc, gen, opt, n, rng):
    """Descend ``mean -log D(G(z))`` (the non-saturating generator loss)."""
    z = sample_noise(n, gen.dz, rng)
    x = gen.generate(z, "train")
    logit = disc.preactivations(x, "train")[:, 0]
    e, de = gan_energy_from_logit(logit)
    loss = _check(float(e.mean()), "generator loss")
    _, dx = disc.backward((de / n)[:, None])
    opt.step(gen.backward(dx))
    return {"gen_loss": loss, "energy_gen": loss}


# --------------------------------------------------------------------------
# loops


def _prepare(cfg, dataset):
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if cfg.train_N > len(dataset):
        raise ValueError(f"train.N={cfg.train_N} exceeds dataset size {len(dataset)}")


def _run(cfg, dataset, energy, gen, gen_step, energy_step, out_dir):
    """Shared skeleton: ``k`` generator steps, then one energy step per batch."""
    _, data_rng, noise_rng = seeded_rngs(cfg.train_seed)
    e_opt = _optimizer(energy.parameters(), cfg)
    g_opt = _optimizer(gen.parameters(), cfg)
    trainlog = TrainLog()
    if out_dir:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    last_good = checkpoint_tensors(energy, gen)
    it, start = 0, time.perf_counter()
    try:
        for epoch in range(cfg.train_epochs):
            for batch in minibatches(dataset, cfg.train_N, data_rng):
                gen_stats = []
                for step in range(cfg.train_k):
                    s = gen_step(g_opt, noise_rng, data_rng)
                    gen_stats.append(s)
                    trainlog.gen_records.append({"iteration": it, "step": step, "gen_loss": s["gen_loss"]})
                e_stats = energy_step(e_opt, batch.images, noise_rng)
                trainlog.records.append({
                    "iteration": it,
                    "epoch": epoch,
                    "energy_data": e_stats["energy_data"],
                    "energy_gen": e_stats["energy_gen"],
                    "entropy_gen": gen_stats[-1].get("entropy_gen", float("nan")),
                    "entropy_data": e_stats.get("entropy_data", float("nan")),
                    "energy_loss": e_stats["energy_loss"],
                    "gen_loss": float(np.mean([s["gen_loss"] for s in gen_stats])),
                    "recon_mse": gen_stats[-1].get("recon_mse", float("nan")),
                    "gen_steps": cfg.train_k,
                })
                trainlog.wall_time.append(time.perf_counter() - start)
                it += 1
                if cfg.train_max_iters and it >= cfg.train_max_iters:
                    break
            last_good = checkpoint_tensors(energy, gen)
            if out_dir:
                save_checkpoint(os.path.join(out_dir, "checkpoints", f"epoch_{epoch:03d}.vgf"), last_good)
            log.info("epoch %d: %d iterations", epoch, it)
            if cfg.train_max_iters and it >= cfg.train_max_iters:
                break
    except NonFiniteError as exc:
        restore(energy, gen, last_good)
        raise TrainingDiverged(f"diverged at iteration {it}: {exc}") from exc
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "final.vgf"), checkpoint_tensors(energy, gen))
        trainlog.to_csv(os.path.join(out_dir, "train_log.csv"))
        trainlog.gen_steps_to_csv(os.path.join(out_dir, "gen_steps.csv"))
        trainlog.timing_to_csv(os.path.join(out_dir, "timing.csv"))
    return trainlog


def train_vgan(cfg: TrainConfig, dataset: Dataset, out_dir=None):
    """Alternate ``k`` generator ascent steps with one energy descent step."""
    _prepare(cfg, dataset)
    init_rng = seeded_rngs(cfg.train_seed)[0]
    energy = build_energy(cfg, dataset.shape, init_rng)
    gen = build_generator(cfg, dataset.shape, init_rng)
    N = cfg.train_N

    def gen_step(opt, noise_rng, data_rng):
        return vgan_generator_step(energy, gen, opt, N, noise_rng)

    def energy_step(opt, x, noise_rng):
        x_gen = gen.generate(sample_noise(N, gen.dz, noise_rng), "train", track_stats=False)
        return vgan_energy_step(energy, x, x_gen, opt)

    trainlog = _run(cfg, dataset, energy, gen, gen_step, energy_step, out_dir)
    return energy, gen, trainlog


def train_vcd(cfg: TrainConfig, dataset: Dataset, out_dir=None):
    """VGAN with negatives from the learned transition operator."""
    _prepare(cfg, dataset)
    init_rng = seeded_rngs(cfg.train_seed)[0]
    energy = build_energy(cfg, dataset.shape, init_rng)
    g = build_transition(cfg, dataset.shape, init_rng)
    N = cfg.train_N

    def gen_step(opt, noise_rng, data_rng):
        x = dataset.images[data_rng.choice(len(dataset), N, replace=False)]
        return vcd_generator_step(energy, g, x, cfg.vcd_rho, opt, noise_rng, entropy=cfg.vcd_entropy)

    def energy_step(opt, x, noise_rng):
        x_gen, _ = vcd_negatives(g, x, cfg.vcd_rho, noise_rng)
        return vgan_energy_step(energy, x, x_gen, opt)

    trainlog = _run(cfg, dataset, energy, g, gen_step, energy_step, out_dir)
    return energy, g, trainlog


def vcd_negatives(g, x, rho, rng):
    """Negative samples for the energy step and the transition they came from.

    At ``rho = 0`` the generator is a plain autoencoder and the negatives are
    its reconstructions ``x_bar``; otherwise they are the mixed samples
    ``x_tilde``. The mask and noise are drawn either way so the random stream
    does not depend on ``rho``.
    """
    tr = transition_sample(g, x, rng, mode="train", track_stats=False)
    return (tr.x_bar if rho == 0.0 else tr.x_tilde), tr


def train_gan_baseline(cfg: TrainConfig, dataset: Dataset, out_dir=None):
    """Classic GAN with a single sigmoid unit on the same feature network."""
    _prepare(cfg, dataset)
    init_rng = seeded_rngs(cfg.train_seed)[0]
    disc = build_discriminator(cfg, dataset.shape, init_rng)
    gen = build_generator(cfg, dataset.shape, init_rng)
    N = cfg.train_N

    def gen_step(opt, noise_rng, data_rng):
        return gan_generator_step(disc, gen, opt, N, noise_rng)

    def energy_step(opt, x, noise_rng):
        x_gen = gen.generate(sample_noise(N, gen.dz, noise_rng), "train", track_stats=False)
        return gan_discriminator_step(disc, x, x_gen, opt)

    trainlog = _run(cfg, dataset, disc, gen, gen_step, energy_step, out_dir)
    return disc, gen, trainlog


RUNNERS = {"vgan": train_vgan, "vcd": train_vcd, "gan": train_gan_baseline}
assert set(RUNNERS) == set(LOOPS)


def train(cfg: TrainConfig, dataset: Dataset, out_dir=None):
    """Dispatch on ``train.loop``."""
    try:
        runner = RUNNERS[cfg.train_loop]
    except KeyError:
        raise ConfigError(f"unknown train.loop {cfg.train_loop!r}") from None
    return runner(cfg, dataset, out_dir)


def build_models(cfg, data_shape, rng):
    """(energy-or-discriminator, generator) matching a loop kind, for loading checkpoints."""
    if cfg.train_loop == "vgan":
        return build_energy(cfg, data_shape, rng), build_generator(cfg, data_shape, rng)
    if cfg.train_loop == "vcd":
        return build_energy(cfg, data_shape, rng), build_transition(cfg, data_shape, rng)
    if cfg.train_loop == "gan":
        return build_discriminator(cfg, data_shape, rng), build_generator(cfg, data_shape, rng)
    raise ValueError(f"unknown train.loop {cfg.train_loop!r}")
