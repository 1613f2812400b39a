"""Training loop with resumable, bit-exact checkpoints.

A checkpoint is a directory of tensor containers (one per named parameter,
batch-norm buffer, and Adam moment) plus a manifest mapping name -> shape
and a meta file with the epoch/step counters and the model geometry. The
per-epoch sample order is derived statelessly from (seed, epoch), so a
resumed run replays exactly the order an uninterrupted run would have used.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses, metrics
from .config import RunConfig
from .model import CloudRemovalNet
from .optim import Adam
from .synthetic import SamplePair, load_sample, read_manifest, seed_for
from .tensorfile import read_tensor, write_tensor


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LoadedDataset:
    train: list[SamplePair]
    test: list[SamplePair]


def load_dataset(data_dir) -> LoadedDataset:
    data_dir = Path(data_dir)
    if not (data_dir / "train.manifest").exists():
        raise FileNotFoundError(f"no train.manifest under {data_dir}")
    train = [load_sample(data_dir, rec) for rec in read_manifest(data_dir / "train.manifest")]
    test = [load_sample(data_dir, rec) for rec in read_manifest(data_dir / "test.manifest")]
    return LoadedDataset(train=train, test=test)


def sar_stack(sample: SamplePair, sar_input: str) -> np.ndarray | None:
    if sar_input == "pfsar":
        return sample.pfsar
    if sar_input == "bcfsar":
        return sample.bcfsar
    if sar_input == "both":
        return np.concatenate([sample.pfsar, sample.bcfsar], axis=0)
    return None


def make_batch(samples: list[SamplePair], sar_input: str):
    cloudy = ad.Tensor(np.stack([s.cloudy for s in samples]))
    clean = ad.Tensor(np.stack([s.clean for s in samples]))
    mask = ad.Tensor(np.stack([s.mask for s in samples]))
    if sar_input == "none":
        return cloudy, clean, mask, None
    sar = ad.Tensor(np.stack([sar_stack(s, sar_input) for s in samples]))
    return cloudy, clean, mask, sar


# -- checkpoint I/O ---------------------------------------------------------

def save_checkpoint(ckpt_dir, net: CloudRemovalNet, optimizer: Adam,
                    epoch: int, config: RunConfig) -> None:
    ckpt_dir = Path(ckpt_dir)
    tensors_dir = ckpt_dir / "tensors"
    tensors_dir.mkdir(parents=True, exist_ok=True)
    entries: list[tuple[str, np.ndarray]] = []
    entries += [(f"param.{name}", p.data) for name, p in net.named_parameters()]
    entries += [(f"buffer.{name}", b) for name, b in net.named_buffers()]
    for key, value in optimizer.state_dict().items():
        if key == "step":
            continue
        entries.append((f"adam.{key}", value))
    manifest_lines = []
    for name, arr in entries:
        write_tensor(tensors_dir / f"{name}.ptf", arr)
        shape = "x".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
        manifest_lines.append(f"{name}\t{shape}")
    (ckpt_dir / "manifest.txt").write_text("\n".join(manifest_lines) + "\n")
    meta = {
        "epoch": epoch,
        "step": optimizer.step_count,
        "seed": config.seed,
        "patch": config.patch,
        "base_channels": config.base_channels,
        "sar_input": config.sar_input,
        "no_scdf": config.no_scdf,
        "no_gc": config.no_gc,
        "no_mmcf": config.no_mmcf,
        "no_mmrf": config.no_mmrf,
        "no_aspp": config.no_aspp,
        "no_polsar": config.no_polsar,
        "scru_literal": config.scru_literal,
    }
    (ckpt_dir / "meta.txt").write_text(
        "\n".join(f"{k} = {v}" for k, v in meta.items()) + "\n")


def read_meta(ckpt_dir) -> dict[str, str]:
    meta = {}
    for line in (Path(ckpt_dir) / "meta.txt").read_text().splitlines():
        key, _, value = line.partition(" = ")
        meta[key.strip()] = value.strip()
    return meta


def load_checkpoint(ckpt_dir, net: CloudRemovalNet, optimizer: Adam | None = None) -> int:
    """Restore parameters (and optimizer state when given); returns the epoch."""
    ckpt_dir = Path(ckpt_dir)
    tensors_dir = ckpt_dir / "tensors"
    names = [line.split("\t")[0] for line in
             (ckpt_dir / "manifest.txt").read_text().splitlines() if line.strip()]
    stored = {name: read_tensor(tensors_dir / f"{name}.ptf") for name in names}
    net.load_state_dict({name[len("param."):]: arr for name, arr in stored.items()
                         if name.startswith("param.")} |
                        {name[len("buffer."):]: arr for name, arr in stored.items()
                         if name.startswith("buffer.")})
    meta = read_meta(ckpt_dir)
    if optimizer is not None:
        state = {"step": int(meta["step"])}
        state.update({name[len("adam."):]: arr for name, arr in stored.items()
                      if name.startswith("adam.")})
        optimizer.load_state_dict(state)
    return int(meta["epoch"])


def model_config_from_meta(meta: dict[str, str]):
    from .model import ModelConfig
    flags = {k: meta[k] == "True" for k in
             ("no_scdf", "no_gc", "no_mmcf", "no_mmrf", "no_aspp", "no_polsar", "scru_literal")}
    sar_channels = {"pfsar": 9, "bcfsar": 3, "both": 12, "none": 1}[meta["sar_input"]]
    return ModelConfig(base_channels=int(meta["base_channels"]),
                       sar_in_channels=sar_channels,
                       patch=int(meta["patch"]), **flags)


# -- the loop ---------------------------------------------------------------

def train(config: RunConfig, log=print, resume: bool = False) -> CloudRemovalNet:
    dataset = load_dataset(config.data_dir)
    if not dataset.train:
        raise FileNotFoundError(f"no training samples under {config.data_dir}")
    net = CloudRemovalNet(config.model_config(), seed=config.seed)
    optimizer = Adam(list(net.named_parameters()), lr=config.learning_rate,
                     beta1=config.adam_beta1, beta2=config.adam_beta2,
                     grad_clip=config.grad_clip)
    start_epoch = 0
    ckpt_dir = Path(config.checkpoint_dir)
    if resume:
        start_epoch = load_checkpoint(ckpt_dir, net, optimizer)
        log(f"resumed from {ckpt_dir} at epoch {start_epoch}")

    n = len(dataset.train)
    step = optimizer.step_count
    done = False
    for epoch in range(start_epoch, config.epochs):
        order = seed_for(config.seed, "shuffle", epoch).permutation(n)
        sums = np.zeros(5)
        batches = 0
        for lo in range(0, n, config.batch_size):
            batch = [dataset.train[i] for i in order[lo:lo + config.batch_size]]
            cloudy, clean, mask, sar = make_batch(batch, config.sar_input)
            pred = net.forward(cloudy, sar, training=True)
            total, lg, ll, ls = losses.loss_components(
                pred, clean, mask, config.lambda_local, config.lambda_ssim)
            if not np.isfinite(total.item()):
                culprit = ad.first_nonfinite_op(total) or "loss"
                raise TrainingDiverged(
                    f"non-finite loss at step {step + 1}; first non-finite tensor from op '{culprit}'")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            batch_psnr = min(metrics.psnr(np.clip(pred.data, 0.0, 1.0), clean.data),
                             metrics.PSNR_CAP_DB)
            sums += (total.item(), lg, ll, ls, batch_psnr)
            batches += 1
            step += 1
            if config.max_steps and step >= config.max_steps:
                done = True
                break
        mean = sums / max(batches, 1)
        log(f"epoch={epoch + 1} step={step} loss_total={mean[0]:.6f} "
            f"loss_global={mean[1]:.6f} loss_local={mean[2]:.6f} loss_ssim={mean[3]:.6f} "
            f"train_psnr={mean[4]:.4f}")
        save_checkpoint(ckpt_dir, net, optimizer, epoch + 1, config)
        if done:
            break
    return net


def overfit_single_sample(config: RunConfig, sample: SamplePair, steps: int = 200,
                          log=None) -> tuple[float, float]:
    """Train on one sample for a fixed number of steps.

    Returns (initial_loss, final_loss); used by the overfit verification.
    """
    net = CloudRemovalNet(config.model_config(), seed=config.seed)
    optimizer = Adam(list(net.named_parameters()), lr=config.learning_rate,
                     beta1=config.adam_beta1, beta2=config.adam_beta2,
                     grad_clip=config.grad_clip)
    cloudy, clean, mask, sar = make_batch([sample], config.sar_input)
    initial = None
    for i in range(steps):
        pred = net.forward(cloudy, sar, training=True)
        total = losses.loss_total(pred, clean, mask, config.lambda_local, config.lambda_ssim)
        value = total.item()
        if initial is None:
            initial = value
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        if log is not None and (i + 1) % 50 == 0:
            log(f"step={i + 1} loss={value:.6f}")
    with ad.no_grad():
        pred = net.forward(cloudy, sar, training=True)
        final = losses.loss_total(pred, clean, mask,
                                  config.lambda_local, config.lambda_ssim).item()
    return float(initial), float(final)
