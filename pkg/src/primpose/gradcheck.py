"""Central finite-difference verification of the loss gradients.

Each kernel draws random inputs, evaluates the analytic gradient, and compares
every coordinate against ``(f(x + h) - f(x - h)) / 2h``. Coordinates whose
perturbation changes a top-K selection are skipped and counted, since the
loss is only piecewise smooth there.
"""

from dataclasses import dataclass, field

import numpy as np

from . import losses

STEP = 1e-4
REL_TOL = 1e-4
# Keeps the relative error meaningful where both gradients are ~0.
REL_FLOOR = 1e-6


@dataclass
class GradKernel:
    """``sample(rng, size)`` returns the list of differentiable arrays;
    ``evaluate(arrays)`` returns ``(value, grads, selection_signature)``."""

    name: str
    sample: object
    evaluate: object


@dataclass
class KernelReport:
    name: str
    max_rel_error: float = 0.0
    n_checked: int = 0
    n_skipped: int = 0
    worst: tuple = None  # (seed, array index, flat index)

    def passed(self, tol=REL_TOL):
        return self.n_checked > 0 and self.max_rel_error <= tol


@dataclass
class GradCheckReport:
    kernels: list = field(default_factory=list)
    tol: float = REL_TOL

    @property
    def passed(self):
        return all(k.passed(self.tol) for k in self.kernels)

    def failures(self):
        return [k for k in self.kernels if not k.passed(self.tol)]

    def to_dict(self):
        return {
            "tol": self.tol,
            "passed": self.passed,
            "kernels": [
                {
                    "name": k.name,
                    "max_rel_error": k.max_rel_error,
                    "n_checked": k.n_checked,
                    "n_skipped": k.n_skipped,
                    "worst": list(k.worst) if k.worst else None,
                    "passed": k.passed(self.tol),
                }
                for k in self.kernels
            ],
        }


def _image_shape(rng, max_size):
    return (int(rng.integers(1, max_size + 1)), int(rng.integers(1, max_size + 1)), 3)


def _topk_kernel():
    ctx = {}

    def sample(rng, max_size):
        shape = _image_shape(rng, max_size)
        n = shape[0] * shape[1]
        ctx["x"] = rng.uniform(0.0, 1.0, shape)
        ctx["K"] = int(rng.integers(1, n + 1))
        return [rng.uniform(0.0, 1.0, shape)]

    def evaluate(arrays):
        (x_hat,) = arrays
        lv, sel = losses._object_topk(ctx["x"], x_hat, ctx["K"])
        return lv.value, [lv.grad], sel.tobytes()

    return GradKernel("loss_object_topk", sample, evaluate)


def _primitive_kernel():
    ctx = {}

    def sample(rng, max_size):
        shape = _image_shape(rng, max_size)
        n = shape[0] * shape[1]
        ctx["x"] = rng.uniform(0.0, 1.0, shape)
        ctx["K"] = int(rng.integers(1, n + 1))
        return [rng.uniform(0.0, 1.0, shape)]

    def evaluate(arrays):
        (x_hat,) = arrays
        lv, sels = losses._primitive(ctx["x"], x_hat, losses.DEFAULT_ALPHA, ctx["K"])
        # |d| has a kink at d = 0; a sign flip under the step is not smooth
        signs = np.signbit(ctx["x"] - x_hat).tobytes()
        return lv.value, [lv.grad], b"|".join([s.tobytes() for s in sels] + [signs])

    return GradKernel("loss_primitive", sample, evaluate)


def _kl_kernel():
    def sample(rng, max_size):
        n = int(rng.integers(1, 4 * max_size + 1))
        return [rng.normal(0.0, 1.0, n), rng.normal(0.0, 1.0, n)]

    def evaluate(arrays):
        lv = losses.kl_divergence(losses.LatentStats(arrays[0], arrays[1]))
        return lv.value, list(lv.grad), None

    return GradKernel("kl_divergence", sample, evaluate)


def _adversarial_kernel(which):
    def sample(rng, max_size):
        nr = int(rng.integers(1, max_size + 1))
        nf = int(rng.integers(1, max_size + 1))
        return [rng.uniform(0.05, 0.95, nr), rng.uniform(0.05, 0.95, nf)]

    def evaluate(arrays):
        l_d, l_g = losses.loss_adversarial(arrays[0], arrays[1])
        lv = l_d if which == "D" else l_g
        return lv.value, list(lv.grad), None

    return GradKernel(f"loss_adversarial[{which}]", sample, evaluate)


def _keypoint_kernel():
    ctx = {}

    def sample(rng, max_size):
        ctx["target"] = rng.uniform(0.0, 640.0, (21, 2))
        return [ctx["target"] + rng.normal(0.0, 5.0, (21, 2))]

    def evaluate(arrays):
        lv = losses.loss_keypoint(arrays[0], ctx["target"])
        return lv.value, [lv.grad], None

    return GradKernel("loss_keypoint", sample, evaluate)


def default_kernels():
    return [
        _topk_kernel(),
        _primitive_kernel(),
        _kl_kernel(),
        _adversarial_kernel("D"),
        _adversarial_kernel("G"),
        _keypoint_kernel(),
    ]


def check_kernel(kernel, seeds, max_size=32, step=STEP):
    """Finite-difference check of one kernel over the given seeds."""
    report = KernelReport(kernel.name)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        arrays = [np.array(a, dtype=np.float64) for a in kernel.sample(rng, max_size)]
        _, grads, sig = kernel.evaluate(arrays)
        for ai, (a, g) in enumerate(zip(arrays, grads)):
            g = np.asarray(g).ravel()
            flat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp, _, sp = kernel.evaluate(arrays)
                flat[i] = orig - step
                fm, _, sm = kernel.evaluate(arrays)
                flat[i] = orig
                if sig is not None and (sp != sig or sm != sig):
                    report.n_skipped += 1
                    continue
                num = (fp - fm) / (2.0 * step)
                rel = abs(g[i] - num) / max(abs(g[i]), abs(num), REL_FLOOR)
                report.n_checked += 1
                if report.worst is None or rel > report.max_rel_error:
                    report.max_rel_error = rel
                    report.worst = (int(seed), ai, i)
    return report


def run_gradcheck(seed=0, n_seeds=20, max_size=32, kernels=None, tol=REL_TOL):
    """Check every kernel on ``n_seeds`` consecutive seeds starting at ``seed``."""
    kernels = default_kernels() if kernels is None else kernels
    seeds = [seed + i for i in range(n_seeds)]
    return GradCheckReport([check_kernel(k, seeds, max_size) for k in kernels], tol)
