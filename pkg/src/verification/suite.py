"""Gradient and loss-oracle suites behind the ``gradcheck`` and ``losscheck`` commands.

Both suites build a tiny random model and batch in 64-bit and return one
:class:`CheckRow` per check; a run passes when every row does.
"""
from typing import Callable, Mapping, NamedTuple, Optional

import numpy as np

from src.config.run_config import ModelConfig
from src.logging_config import get_logger
from src.model.momentum import MomentumParams, momentum_target
from src.model.networks import (
    decode_features,
    decode_pixels,
    encode_visible,
    image_embedding,
    text_embedding,
)
from src.model.params import (
    BRIDGE,
    FEATURE_DECODER,
    IMAGE_ENCODER,
    IMAGE_PROJ,
    LOG_TAU,
    MASK_TOKEN_FEATURE,
    MASK_TOKEN_PIXEL,
    PIXEL_DECODER,
    TEXT_ENCODER,
    TEXT_PROJ,
    ModelParams,
    init_params,
)
from src.model.patcher import MaskPlan, PatchGrid, patchify, sample_mask, select_visible
from src.numeric import ops
from src.numeric.gradcheck import DEFAULT_COORDS, DEFAULT_STEP, grad_check
from src.numeric.rng import Rng
from src.numeric.tensor import Tensor, float64_mode
from src.objectives.losses import (
    ClipBatchFeatures,
    clip_losses,
    image_to_text_loss,
    masked_feature_distillation_loss,
    mim_loss,
    text_to_image_loss,
    total_loss,
)
from src.objectives.oracles import (
    cosine_distill_reference,
    mim_reference,
    two_way_softmax_loss,
    vanilla_infonce,
)
from src.types import FloatArray, IntArray

logger = get_logger("verification")

GRAD_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-6
ORACLE_BATCHES = 50
FAULT_OFFSET = 1.0
VERIFY_VOCAB = 12

_MIM_PARAMS = (f"{IMAGE_ENCODER}.", f"{PIXEL_DECODER}.", MASK_TOKEN_PIXEL)
_CLIP_PARAMS = (f"{IMAGE_ENCODER}.", f"{BRIDGE}.", f"{TEXT_ENCODER}.",
                IMAGE_PROJ, TEXT_PROJ, LOG_TAU)
_MFD_PARAMS = (f"{IMAGE_ENCODER}.", f"{FEATURE_DECODER}.", MASK_TOKEN_FEATURE)


class CheckRow(NamedTuple):
    check: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)


class VerificationBatch(NamedTuple):
    """Fixed inputs shared by every gradient case."""
    config: ModelConfig
    arrays: dict[str, FloatArray]
    patches: FloatArray
    plans: list[MaskPlan]
    token_ids: IntArray
    labels: list
    distill_target: FloatArray


def build_batch(seed: int = 0, n_images: int = 3,
                model_config: Optional[ModelConfig] = None) -> VerificationBatch:
    """Random images and mixed labels (two share a class) for the tiny model or `model_config`."""
    config = model_config or ModelConfig.tiny(vocab_size=VERIFY_VOCAB)
    grid = PatchGrid.from_model_config(config)
    rng = Rng.derive(seed, "verify")
    with float64_mode():
        params = init_params(config, Rng.derive(seed, "verify", "init"))
        # Non-zero mask tokens so their gradients are exercised away from 0.
        for name in (MASK_TOKEN_PIXEL, MASK_TOKEN_FEATURE):
            params[name].data[...] = rng.normal_array(params[name].shape, std=0.02)
        images = rng.normal_array((n_images,) + grid.image_shape, std=0.5)
        patches = patchify(Tensor(images), grid).data
        plans = [sample_mask(grid.num_patches, 0.5, rng) for _ in range(n_images)]
        momentum = MomentumParams.from_online(params, 0.999)
        target = momentum_target(momentum, Tensor(patches)).data
    token_ids = np.zeros((n_images, config.max_text_len), dtype=np.int64)
    for i in range(n_images):
        length = 2 + rng.bounded(config.max_text_len - 1)
        for j in range(length):
            token_ids[i, j] = 2 + rng.bounded(config.vocab_size - 2)
    labels = [0, 1, 0][:n_images]
    return VerificationBatch(config, params.arrays(), patches, plans, token_ids, labels, target)


# ---------------------------------------------------------------------------
# Loss cases as functions of the parameter map
# ---------------------------------------------------------------------------

def _clip_features(p: ModelParams, batch: VerificationBatch) -> ClipBatchFeatures:
    return ClipBatchFeatures(
        image_embeds=image_embedding(p, Tensor(batch.patches), use_bridge=True),
        text_embeds=text_embedding(p, batch.token_ids),
        labels=batch.labels,
        tau=ops.exp(p[LOG_TAU]),
    )


def _latents(p: ModelParams, batch: VerificationBatch) -> Tensor:
    patches = Tensor(batch.patches)
    return encode_visible(p, select_visible(patches, batch.plans), batch.plans)


def _mim(p: ModelParams, batch: VerificationBatch) -> Tensor:
    pred = decode_pixels(p, _latents(p, batch), batch.plans)
    return mim_loss(pred, batch.patches, batch.plans)


def _mfd(p: ModelParams, batch: VerificationBatch) -> Tensor:
    pred = decode_features(p, _latents(p, batch), batch.plans)
    return masked_feature_distillation_loss(pred, Tensor(batch.distill_target), batch.plans)


def _total(p: ModelParams, batch: VerificationBatch) -> Tensor:
    _, _, lg = clip_losses(_clip_features(p, batch))
    return total_loss(_mim(p, batch), lg, _mfd(p, batch), 0.5, 0.5).total


LOSS_CASES: dict[str, tuple[Callable[[ModelParams, VerificationBatch], Tensor], tuple]] = {
    "mim": (_mim, _MIM_PARAMS),
    "i2t": (lambda p, b: image_to_text_loss(_clip_features(p, b)), _CLIP_PARAMS),
    "t2i": (lambda p, b: text_to_image_loss(_clip_features(p, b)), _CLIP_PARAMS),
    "lg_clip": (lambda p, b: clip_losses(_clip_features(p, b))[2], _CLIP_PARAMS),
    "mfd": (_mfd, _MFD_PARAMS),
    "total": (_total, ()),
}


def _tamper(name: str, grad: FloatArray) -> FloatArray:
    return grad + FAULT_OFFSET


def run_gradcheck(seed: int = 0, n_coords: int = DEFAULT_COORDS, h: float = DEFAULT_STEP,
                  inject_fault: bool = False,
                  cases: Optional[Mapping[str, tuple]] = None,
                  model_config: Optional[ModelConfig] = None) -> list[CheckRow]:
    """Finite-difference check of every loss composed with the full model.

    The tiny model is the default; pass `model_config` to check a larger one.
    """
    batch = build_batch(seed, model_config=model_config)
    rows = []
    for name, (loss_fn, prefixes) in (cases or LOSS_CASES).items():
        free = {n: a for n, a in batch.arrays.items() if not prefixes or n.startswith(prefixes)}
        fixed = {n: a for n, a in batch.arrays.items() if n not in free}

        def objective(leaves, loss_fn=loss_fn, fixed=fixed):
            tensors = {n: Tensor(a) for n, a in fixed.items()}
            tensors.update(leaves)
            return loss_fn(ModelParams(tensors, batch.config), batch)

        report = grad_check(objective, free, h=h, rng=Rng.derive(seed, "gradcheck", name),
                            n_coords=n_coords, tamper=_tamper if inject_fault else None)
        rows.append(CheckRow(name, report.max_rel_error, GRAD_TOLERANCE))
        logger.info("gradcheck %s: max rel err %.3e", name, report.max_rel_error)
    return rows


# ---------------------------------------------------------------------------
# Oracle and closed-form checks
# ---------------------------------------------------------------------------

def _unit_rows(rng: Rng, n: int, d: int) -> FloatArray:
    x = rng.normal_array((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _infonce_agreement(rng: Rng) -> float:
    worst = 0.0
    with float64_mode():
        for _ in range(ORACLE_BATCHES):
            b = 1 + rng.bounded(16)
            img, txt = _unit_rows(rng, b, 8), _unit_rows(rng, b, 8)
            tau = 1.0 + 20.0 * rng.uniform()
            ours = clip_losses(ClipBatchFeatures(Tensor(img), Tensor(txt),
                                                 [f"uid-{i}" for i in range(b)], tau))[2].item()
            worst = max(worst, abs(ours - vanilla_infonce(img, txt, tau)))
    return worst


def _two_way_case() -> float:
    with float64_mode():
        img = np.array([[1.0, 0.0], [0.0, 1.0]])
        txt = np.array([[0.6, 0.8], [0.0, 1.0]])
        ours = image_to_text_loss(ClipBatchFeatures(Tensor(img), Tensor(txt), [0, 1], 10.0))
        expected = 0.5 * (two_way_softmax_loss(0.6, 0.0, 10.0)
                          + two_way_softmax_loss(1.0, 0.8, 10.0))
        return abs(ours.item() - expected)


def _mim_cases(rng: Rng) -> float:
    with float64_mode():
        target = rng.normal_array((16, 12))
        plan = sample_mask(16, 0.75, rng)
        perfect = mim_loss(Tensor(target), target, plan).item()
        pred = target + rng.normal_array((16, 12), std=0.3)
        # visible positions must not move the loss
        moved = pred.copy()
        moved[plan.visible_idx] += 5.0
        ours = mim_loss(Tensor(pred), target, plan).item()
        return max(abs(perfect),
                   abs(ours - mim_reference(pred, target, plan.masked_idx)),
                   abs(mim_loss(Tensor(moved), target, plan).item() - ours))


def _mfd_cases(rng: Rng) -> float:
    with float64_mode():
        x = rng.normal_array((6, 5))
        same = masked_feature_distillation_loss(Tensor(2.0 * x), Tensor(x)).item()
        e0, e1 = np.eye(5)[[0]], np.eye(5)[[1]]
        orthogonal = masked_feature_distillation_loss(Tensor(e0), Tensor(e1)).item()
        y = rng.normal_array((6, 5))
        ours = masked_feature_distillation_loss(Tensor(x), Tensor(y)).item()
        return max(abs(same + 1.0), abs(orthogonal),
                   abs(ours - cosine_distill_reference(x, y)))


def _single_pair_case(rng: Rng) -> float:
    with float64_mode():
        img, txt = _unit_rows(rng, 1, 4), _unit_rows(rng, 1, 4)
        return abs(clip_losses(ClipBatchFeatures(Tensor(img), Tensor(txt), [3], 14.0))[2].item())


def run_losscheck(seed: int = 0) -> list[CheckRow]:
    """Oracle agreement and closed-form values for every loss."""
    rng = Rng.derive(seed, "losscheck")
    checks = {
        "lg_clip_vs_infonce": _infonce_agreement(rng),
        "i2t_two_way": _two_way_case(),
        "mim_closed_form": _mim_cases(rng),
        "mfd_closed_form": _mfd_cases(rng),
        "single_pair_clip": _single_pair_case(rng),
    }
    rows = [CheckRow(name, err, ORACLE_TOLERANCE) for name, err in checks.items()]
    for row in rows:
        logger.info("losscheck %s: abs err %.3e", row.check, row.max_rel_error)
    return rows


def format_report(rows: list[CheckRow]) -> str:
    width = max(len(r.check) for r in rows)
    lines = [f"{'check':<{width}}  {'max_err':>10}  {'tol':>8}  status"]
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.check:<{width}}  {r.max_rel_error:>10.3e}  {r.tolerance:>8.1e}  {status}")
    return "\n".join(lines)
