"""Shared fixtures: a small extractor, fast model configs, and the transcribed
sensory-panel table used by the correlation tests."""

import numpy as np
import pytest

from berrystack import ModelConfig, SensoryRecord, make_surrogate_extractor

# One row per panel berry: id, mass (g), shininess, colour uniformity, firmness,
# skin strength, flavor, sweetness, texture, human ripeness score, target label,
# machine confidence (%). None marks scores the assessor left blank.
PANEL_ROWS = [
    ("3D9262", 8.6849, 5, 4, 4, "N", 2, 3, 3, 2.5, 1, 2.49),
    ("976122", 6.4945, 4, 5, 4, "N", 4, 4, 3, 2.5, 1, 1.09),
    ("F3B65F", 7.9683, 3, 4, 4, "N", 5, 5, 4, 2.0, 1, 78.48),
    ("061AE0", 4.9857, 5, 4, 5, "N", None, None, None, 2.0, 1, 95.72),
    ("7DE558", 6.6189, 4, 5, 4, "N", 4, 4, 4, 3.0, 0, 96.85),
    ("A2761F", 7.0942, 4, 5, 4, "Y", 3, 3, 3, 3.0, 0, 0.19),
    ("8B49E5", 8.1658, 2, 4, 2, "N", 2, 3, 2, 3.0, 0, 0.01),
    ("165B41", 6.3459, 3, 1, 4, "N", 5, 5, 5, 1.5, 1, 99.99),
    ("FF9EA0", 5.9842, 4, 1, 4, "N", 5, 5, 5, 1.5, 1, 99.86),
    ("E206D2", 11.2435, 4, 5, 3, "N", 2, 2, 2, 3.5, 0, 0.08),
]


def panel_records() -> list[SensoryRecord]:
    records = []
    for row in PANEL_ROWS:
        records.append(
            SensoryRecord(
                berry_id=row[0],
                mass_g=row[1],
                shininess=row[2],
                colour_uniformity=row[3],
                firmness=row[4],
                skin_strength=row[5],
                flavor=row[6],
                sweetness=row[7],
                texture=row[8],
                human_ripeness=row[9],
                target=row[10],
                machine_confidence_pct=row[11],
            )
        )
    return records


def panel_table_text() -> str:
    """The same rows in the tab-separated sensory table format ('-' for missing)."""
    header = (
        "berry_id\tmass_g\tshininess\tcolour_uniformity\tfirmness\tskin_strength"
        "\tflavor\tsweetness\ttexture\thuman_ripeness\ttarget\tmachine_confidence_pct"
    )
    lines = [header]
    for row in PANEL_ROWS:
        lines.append("\t".join("-" if cell is None else str(cell) for cell in row))
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def small_extractor():
    return make_surrogate_extractor(seed=101, output_dim=24)


@pytest.fixture()
def fast_config():
    return ModelConfig(fc_spec=(16, 8), batch_size=8, epochs=12, patience=4, seed=7)


def pearson_oracle(x, y) -> float:
    """Independent Pearson r straight from the definition."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xd = x - x.mean()
    yd = y - y.mean()
    return float((xd * yd).sum() / np.sqrt((xd * xd).sum() * (yd * yd).sum()))


def concordance_oracle(confidences, labels) -> float:
    """AUC as the brute-force probability that a positive outranks a negative,
    counting ties as half."""
    confidences = np.asarray(confidences, dtype=float)
    labels = np.asarray(labels, dtype=int)
    positives = confidences[labels == 1]
    negatives = confidences[labels == 0]
    total = 0.0
    for p in positives:
        for n in negatives:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(positives) * len(negatives))
