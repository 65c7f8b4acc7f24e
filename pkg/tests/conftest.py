import numpy as np
import pytest

from graspme.assets import family_templates
from graspme.dataset import annotation_record, assemble_index, category_records
from graspme.render import RenderSettings, annotate_scene, rasterize
from graspme.scene import GenerationConfig, generate_scene, scene_rng


@pytest.fixture(scope="session")
def simple_templates():
    return family_templates("simple")


@pytest.fixture(scope="session")
def complex_templates():
    return family_templates("complex")


@pytest.fixture(scope="session")
def small_config():
    return GenerationConfig(image_size=(64, 64))


def build_gt(templates, n_scenes, seed=0, config=None):
    """In-memory COCO dataset from freshly rendered scenes (no files written)."""
    config = config or GenerationConfig(image_size=(160, 160))
    cats = category_records(templates)
    ids = {c["name"]: c["id"] for c in cats}
    width, height = config.image_size
    images, per_image = [], []
    for i in range(n_scenes):
        scene = generate_scene(scene_rng(seed, i), config, templates)
        buffers = rasterize(scene, RenderSettings(segments=config.segments))
        images.append({"id": i, "file_name": f"rgb_{i:06d}.png", "width": width, "height": height})
        per_image.append([annotation_record(a, ids[a.category_name]) for a in annotate_scene(scene, buffers)])
    return assemble_index(images, per_image, cats)


@pytest.fixture(scope="session")
def simple_gt(simple_templates):
    return build_gt(simple_templates, 24, seed=3)


@pytest.fixture(scope="session")
def complex_gt(complex_templates):
    return build_gt(complex_templates, 24, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; ``ok=None`` marks a skip."""

    def record(number, ok, detail):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
