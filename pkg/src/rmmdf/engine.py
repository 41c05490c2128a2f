"""Recursive multi-stage orchestration, losses, and the training loop.

One recursion stage takes the current VGG pyramid X, ResNet pyramid F and
fine-scale map M, refines X with M, aggregates X, and re-runs the deep
stream with the aggregates injected at every block boundary (so every
injection influences the re-decoded map), then decodes the new deepest
level into the next M. After the final stage the aggregated features and
M feed the selective-fusion head, whose two-channel logits yield the
final saliency map. All stage weights are shared (recurrent unrolling),
so the parameter count is independent of the stage count.

Exactly three loss heads exist: binary cross entropy on the VGG stream's
1x1-classifier score, binary cross entropy on the final fine-scale map,
and softmax cross entropy on the selective-fusion logits. The refinement
and aggregation convs carry no loss of their own and learn only through
these three heads.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .backbones import (
    ResNetStream,
    SaliencyDecoder,
    VggStream,
    check_image,
)
from .config import NetworkConfig, split_seed
from .errors import ConfigError, DivergenceError, ShapeError
from .fusion import AggregatedMap, InterModelFusion
from .sdf import SelectiveFusion, saliency_from_logits

EPS = 1e-7


@dataclass
class StageState:
    """All recursion state at stage ``t``."""

    t: int
    X: tuple[Tensor, ...] | None
    F: tuple[Tensor, ...] | None
    M: Tensor | None


@dataclass
class ForwardResult:
    stage_maps: list[Tensor]
    final: Tensor
    sdf_logits: Tensor | None
    vgg_score: Tensor | None
    aggregates: list[AggregatedMap] | None
    state: StageState


@dataclass
class LossBundle:
    """The three loss terms (unweighted) and their weighted total."""

    loss_vgg: Tensor
    loss_resnet: Tensor
    loss_sdf: Tensor
    total: Tensor


class RecursiveFusionNet(nn.Module):
    """The full parallel-encoder fusion network (or an ablation subset)."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.vgg = VggStream(config) if config.with_vgg else None
        self.resnet = ResNetStream(config) if config.with_resnet else None
        self.decoder = SaliencyDecoder(config) if config.with_resnet else None
        if config.with_drm or config.with_dam:
            self.fusion = InterModelFusion(config)
        else:
            self.fusion = None
        self.sdf = SelectiveFusion(config) if config.with_sdf else None
        heads = {}
        if config.with_vgg:
            in_ch = config.agg_channels if config.with_dam else config.vgg_channels[0]
            heads["vgg"] = nn.Conv2d(in_ch, 1, 1)
        self.heads = nn.ModuleDict(heads)

    # -- recursion ----------------------------------------------------------

    def initial_state(self, image: Tensor) -> StageState:
        check_image(image)
        X = self.vgg(image) if self.vgg is not None else None
        F_pyr = self.resnet(image) if self.resnet is not None else None
        M = self.decoder(F_pyr) if self.decoder is not None else None
        return StageState(t=1, X=X, F=F_pyr, M=M)

    def advance(self, state: StageState) -> StageState:
        """Run one refinement/aggregation exchange and re-decode the map."""
        X, F_pyr, M = state.X, state.F, state.M
        if self.config.detach_between_stages:
            X = tuple(x.detach() for x in X) if X is not None else None
            F_pyr = tuple(f.detach() for f in F_pyr) if F_pyr is not None else None
            M = M.detach() if M is not None else None
        X_next = X
        if self.fusion is not None and self.fusion.drm is not None:
            X_next = self.fusion.refine(X, M)
        F_next = F_pyr
        if self.fusion is not None and self.fusion.dam is not None:
            aggs = self.fusion.dam.aggregate_all(X, state.t)
            F_next = self._inject_and_rerun(F_pyr, aggs)
        return self.update_saliency(StageState(state.t, X_next, F_next, M))

    def _inject_and_rerun(self, F_pyr: tuple[Tensor, ...], aggs: list[AggregatedMap]
                          ) -> tuple[Tensor, ...]:
        """Inject aggregated features at every block boundary and re-run
        the deep stream, so shallow injections reach the decoded map."""
        dam = self.fusion.dam
        f1 = dam.inject_level(F_pyr[0], aggs[0])
        levels = [f1]
        x = self.resnet.pool(f1)
        for i in range(2, 6):
            x = getattr(self.resnet, f"block{i}")(x)
            x = dam.inject_level(x, aggs[i - 1])
            levels.append(x)
        return tuple(levels)

    def update_saliency(self, state: StageState) -> StageState:
        """Decode the (already injected) ResNet pyramid into the next map
        and advance the stage counter."""
        M_next = self.decoder(state.F) if self.decoder is not None else state.M
        return StageState(state.t + 1, state.X, state.F, M_next)

    def forward(self, image: Tensor, stages: int | None = None) -> ForwardResult:
        n = self.config.stages if stages is None else stages
        if n < 1:
            raise ConfigError(f"stage count must be >= 1, got {n}")
        state = self.initial_state(image)
        maps = [state.M] if state.M is not None else []
        if self.fusion is not None:
            for _ in range(n - 1):
                state = self.advance(state)
                maps.append(state.M)

        aggregates = None
        if self.fusion is not None and self.fusion.dam is not None:
            aggregates = self.fusion.dam.aggregate_all(state.X, state.t)

        vgg_score = None
        if "vgg" in self.heads:
            feat = aggregates[0].data if aggregates is not None else state.X[0]
            score = self.heads["vgg"](feat)
            score = F.interpolate(
                score, size=image.shape[-2:], mode="bilinear", align_corners=False
            )
            vgg_score = torch.sigmoid(score)

        sdf_logits = None
        if self.sdf is not None:
            fused = self.sdf.fuse_features(aggregates, state.M)
            sdf_logits = self.sdf(fused)
            final = saliency_from_logits(sdf_logits)
        elif state.M is not None:
            final = state.M
        else:
            final = vgg_score
        return ForwardResult(maps, final, sdf_logits, vgg_score, aggregates, state)

    def run_stages(self, image: Tensor, stages: int | None = None
                   ) -> tuple[list[Tensor], Tensor]:
        """Return the per-stage fine-scale maps and the final prediction."""
        result = self.forward(image, stages)
        return result.stage_maps, result.final


# -- losses -------------------------------------------------------------------


def _check_mask(gt: Tensor) -> None:
    if not torch.all((gt == 0) | (gt == 1)):
        raise ConfigError("ground-truth mask must be strictly binary (0/1)")


def cross_entropy_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean per-pixel cross entropy.

    Single-channel predictions are treated as foreground scores in [0, 1]
    (binary cross entropy with clamping); two-channel predictions are
    treated as classification logits (softmax cross entropy).
    """
    if gt.ndim == 3:
        gt = gt.unsqueeze(1)
    if pred.shape[-2:] != gt.shape[-2:] or pred.shape[0] != gt.shape[0]:
        raise ShapeError(
            f"prediction {tuple(pred.shape)} and mask {tuple(gt.shape)} differ in size"
        )
    _check_mask(gt)
    gt = gt.to(pred.dtype)
    if pred.shape[1] == 1:
        p = pred.clamp(EPS, 1 - EPS)
        return -(gt * torch.log(p) + (1 - gt) * torch.log(1 - p)).mean()
    if pred.shape[1] == 2:
        logp = torch.log_softmax(pred, dim=1)
        return -(gt * logp[:, 1:2] + (1 - gt) * logp[:, 0:1]).mean()
    raise ShapeError(f"prediction must have 1 or 2 channels, got {pred.shape[1]}")


def compute_losses(result: ForwardResult, gt: Tensor, config: NetworkConfig) -> LossBundle:
    zero = torch.zeros((), dtype=result.final.dtype, device=result.final.device)
    loss_vgg = (
        cross_entropy_loss(result.vgg_score, gt) if result.vgg_score is not None else zero
    )
    loss_resnet = (
        cross_entropy_loss(result.state.M, gt) if result.state.M is not None else zero
    )
    loss_sdf = (
        cross_entropy_loss(result.sdf_logits, gt) if result.sdf_logits is not None else zero
    )
    w = config.loss_weights
    total = w.vgg * loss_vgg + w.resnet * loss_resnet + w.sdf * loss_sdf
    return LossBundle(loss_vgg, loss_resnet, loss_sdf, total)


# -- model construction and checkpoints ---------------------------------------


def build_model(config: NetworkConfig, seed: int = 0) -> RecursiveFusionNet:
    """Build a model with reproducible weight init from the root seed."""
    from .backbones import init_conv_weights

    torch.manual_seed(split_seed(seed, "weights"))
    model = RecursiveFusionNet(config)
    model.apply(init_conv_weights)
    return model


def save_checkpoint(model: RecursiveFusionNet, path: str) -> None:
    """Atomic checkpoint write (temp file + rename)."""
    payload = {"config": model.config.to_dict(), "model": model.state_dict()}
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str, config: NetworkConfig | None = None) -> RecursiveFusionNet:
    """Rebuild a model from a checkpoint.

    With an explicit ``config`` the stored weights must fit it; the first
    mismatched or missing parameter is named in the raised error.
    """
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if config is None:
        config = NetworkConfig.from_dict(payload["config"])
    model = RecursiveFusionNet(config)
    state = payload["model"]
    own = model.state_dict()
    for name in own:
        if name not in state:
            raise ConfigError(f"checkpoint is missing parameter: {name}")
        if state[name].shape != own[name].shape:
            raise ConfigError(
                f"checkpoint/config shape mismatch at parameter {name}: "
                f"{tuple(state[name].shape)} vs {tuple(own[name].shape)}"
            )
    extra = [n for n in state if n not in own]
    if extra:
        raise ConfigError(f"checkpoint has unexpected parameter: {extra[0]}")
    model.load_state_dict(state)
    return model


# -- training ------------------------------------------------------------------

LOG_COLUMNS = ("iteration", "loss_vgg", "loss_resnet", "loss_sdf", "total", "lr")


@dataclass
class TrainResult:
    iterations: int
    initial_loss: float
    final_loss: float
    checkpoint_path: str
    log_path: str
    history: list[dict] = field(default_factory=list)


class Trainer:
    """Plain SGD loop over preprocessed (image, mask) tensors.

    The encoder streams and the fusion/regression modules sit in separate
    optimizer groups so they can use different momenta. The learning rate
    follows a step decay. Every iteration appends one row to the CSV log;
    checkpoints are written atomically.
    """

    def __init__(
        self,
        model: RecursiveFusionNet,
        images: Tensor,
        masks: Tensor,
        out_dir: str,
        seed: int = 0,
    ):
        if images.shape[0] == 0:
            raise ConfigError("training dataset is empty")
        if images.shape[0] != masks.shape[0]:
            raise ConfigError("images and masks are misaligned")
        self.model = model
        self.config = model.config
        self.images = images
        self.masks = masks
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.log_path = os.path.join(out_dir, "training_log.csv")
        self.checkpoint_path = os.path.join(out_dir, "checkpoint_final.pt")
        self.shuffle_rng = np.random.default_rng(split_seed(seed, "shuffle"))
        opt = self.config.optimizer
        main_params, fusion_params = [], []
        for name, p in model.named_parameters():
            if name.startswith(("fusion.", "sdf.")):
                fusion_params.append(p)
            else:
                main_params.append(p)
        groups = []
        if main_params:
            groups.append({"params": main_params, "momentum": opt.momentum_main})
        if fusion_params:
            groups.append({"params": fusion_params, "momentum": opt.momentum_fusion})
        self.optimizer = torch.optim.SGD(
            groups, lr=opt.lr, weight_decay=opt.weight_decay
        )
        self._order: list[int] = []

    def _next_batch(self) -> tuple[Tensor, Tensor]:
        bs = min(self.config.optimizer.batch_size, self.images.shape[0])
        while len(self._order) < bs:
            self._order.extend(self.shuffle_rng.permutation(self.images.shape[0]).tolist())
        idx = [self._order.pop(0) for _ in range(bs)]
        return self.images[idx], self.masks[idx]

    def _lr_at(self, iteration: int) -> float:
        opt = self.config.optimizer
        return opt.lr * opt.lr_decay_factor ** (iteration // opt.lr_decay_step)

    def _first_bad_gradient(self) -> str:
        for name, p in self.model.named_parameters():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                return name
        return "<loss>"

    def run(self, iterations: int | None = None) -> TrainResult:
        n_iter = self.config.iterations if iterations is None else iterations
        self.model.train()
        initial_loss = math.nan
        final_loss = math.nan
        history: list[dict] = []
        with open(self.log_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
            for it in range(n_iter):
                lr = self._lr_at(it)
                for group in self.optimizer.param_groups:
                    group["lr"] = lr
                images, masks = self._next_batch()
                self.optimizer.zero_grad()
                result = self.model(images)
                bundle = compute_losses(result, masks, self.config)
                bundle.total.backward()
                if not torch.isfinite(bundle.total):
                    raise DivergenceError(self._first_bad_gradient(), it)
                self.optimizer.step()
                row = {
                    "iteration": it,
                    "loss_vgg": bundle.loss_vgg.item(),
                    "loss_resnet": bundle.loss_resnet.item(),
                    "loss_sdf": bundle.loss_sdf.item(),
                    "total": bundle.total.item(),
                    "lr": lr,
                }
                writer.writerow([row[c] for c in LOG_COLUMNS])
                history.append(row)
                if it == 0:
                    initial_loss = row["total"]
                final_loss = row["total"]
                every = self.config.checkpoint_every
                if every and (it + 1) % every == 0:
                    save_checkpoint(
                        self.model,
                        os.path.join(self.out_dir, f"checkpoint_iter{it + 1}.pt"),
                    )
        save_checkpoint(self.model, self.checkpoint_path)
        return TrainResult(
            n_iter, initial_loss, final_loss, self.checkpoint_path, self.log_path, history
        )


def predict_maps(model: RecursiveFusionNet, images: Tensor, stages: int | None = None
                 ) -> tuple[list[Tensor], Tensor]:
    """Run inference (eval mode, no gradients)."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            maps, final = model.run_stages(images, stages)
    finally:
        model.train(was_training)
    return maps, final
