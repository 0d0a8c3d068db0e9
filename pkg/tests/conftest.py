import numpy as np
import pytest
import torch

from curvelab.model import CurveFormer, ModelConfig
from curvelab.scenegen import SceneSpec, generate_scene

TINY_YS = (5.0, 20.0, 50.0, 100.0)


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(embed_dim=8, num_heads=2, num_points=2, num_levels=2, num_layers=2, num_queries=4,
                encoder_layers=1, ffn_dim=16, backbone_channels=(4, 4), image_size=(32, 40), ys=TINY_YS,
                x_range=(-8.0, 8.0))
    base.update(kw)
    return ModelConfig(**base)


def tiny_scene_spec(**kw) -> SceneSpec:
    base = dict(image_size=(32, 40), focal=25.0, lane_count=(1, 2), stroke_width=1.0, seed=3)
    base.update(kw)
    return SceneSpec(**base)


def tiny_scenes(n=2, **kw):
    spec = tiny_scene_spec(**kw)
    return [generate_scene(spec, i, ys=TINY_YS) for i in range(n)]


def jitter_(model: torch.nn.Module, scale: float = 0.05, seed: int = 0) -> torch.nn.Module:
    """Perturb every parameter so zero-initialized layers carry generic values."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_scenes():
    spec = SceneSpec()
    return [generate_scene(spec, i) for i in range(4)]


def tiny_loss_problem(seed: int = 0):
    """A float64 tiny model, a two-scene batch, and a closure computing the total loss."""
    from curvelab.harness import make_dataset
    from curvelab.training import LossCoefficients, total_loss

    torch.manual_seed(seed)
    cfg = tiny_model_config()
    model = jitter_(CurveFormer(cfg), seed=seed).double()
    model.train()
    scenes = tiny_scenes(2)
    data = make_dataset(scenes, cfg.ys)
    image = data.images.double()
    cams = data.cameras(range(len(scenes))).to(torch.float64)

    def loss(img=None):
        out = model(image if img is None else img, cams)
        return total_loss(out, data.targets, LossCoefficients(), data.masks, cfg.range3d.y_span).total

    return model, image, loss


def central_difference(loss, tensor: torch.Tensor, indices, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``loss()`` w.r.t. flat ``indices`` of ``tensor`` (modified in place)."""
    flat = tensor.data.view(-1)
    out = np.zeros(len(indices))
    with torch.no_grad():
        for i, j in enumerate(indices):
            orig = flat[j].item()
            flat[j] = orig + h
            up = loss().item()
            flat[j] = orig - h
            down = loss().item()
            flat[j] = orig
            out[i] = (up - down) / (2 * h)
    return out


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; the lines are repeated in the terminal summary."""
    def report(name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
