import numpy as np
import pytest

from expressml.dataset import LabeledMatrix, SynthSpec, generate_synthetic, stratified_split


def make_matrix(x, labels, genes=None):
    x = np.asarray(x, dtype=np.float32)
    if genes is None:
        genes = [f"g{j:03d}" for j in range(x.shape[1])]
    return LabeledMatrix(x, labels, genes)


@pytest.fixture(scope="session")
def small_synth():
    """A quick planted-signal problem: 4 classes, 60 genes, 8 informative."""
    matrix, planted = generate_synthetic(SynthSpec(classes=4, samples_per_class=20, genes=60,
                                                   informative_genes=8, effect_size=1.5, seed=5))
    split = stratified_split(matrix, 0.75, 5)
    return matrix, planted, matrix.subset(rows=split.train_rows), matrix.subset(rows=split.test_rows)


@pytest.fixture(scope="session")
def benchmark_seed1():
    """Full-size planted-signal benchmark for seed 1 with its split."""
    matrix, planted = generate_synthetic(SynthSpec(seed=1))
    split = stratified_split(matrix, 0.75, 1)
    return matrix, planted, matrix.subset(rows=split.train_rows), matrix.subset(rows=split.test_rows)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    """Log one acceptance criterion outcome for the end-of-run summary."""
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
