"""Gradient-oracle problems with known (or estimated) smoothness and variance constants.

Every problem is a finite sum f(x) = (1/N) sum_xi F(x; xi) over samples xi in {1..N},
with G(x; xi) the exact per-sample gradient, so the finite-population mean of G is
the full gradient.  Oracles are pure and safe to call from any thread.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SeedSpec, derive_stream
from .theory import constants_quadratic


class Problem:
    """Base oracle bundle.  Subclasses fill in the per-sample pieces.

    Attributes: n (dimension), sample_count (N), x1 (initial point), and the
    constants L, L_max, sigma_sq, gap.  constants_estimated marks problems whose
    constants come from sampling rather than closed forms.
    """

    name: str = "problem"
    constants_estimated: bool = False

    n: int
    sample_count: int

    def _check_x(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected parameter vector of shape ({self.n},), got {x.shape}")
        return x

    def _check_xi(self, xi: int) -> int:
        if not 1 <= xi <= self.sample_count:
            raise ValueError(f"sample index {xi} outside 1..{self.sample_count}")
        return int(xi)

    def objective(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def stochastic_gradient(self, x: np.ndarray, xi: int) -> np.ndarray:
        raise NotImplementedError

    def batch_gradient_sum(self, x: np.ndarray, xis: np.ndarray) -> np.ndarray:
        """Sum of G(x; xi) over the given samples, accumulated left to right."""
        x = self._check_x(x)
        acc = np.zeros(self.n)
        for xi in xis:
            acc += self.stochastic_gradient(x, int(xi))
        return acc

    def l_s(self, s: int) -> float:
        """Support-restricted gradient Lipschitz constant for supports of size max(s, 1)."""
        raise NotImplementedError

    @property
    def x1(self) -> np.ndarray:
        return self._x1.copy()


# ------------------------------------------------------------ noisy quadratic

class NoisyQuadratic(Problem):
    """f(x) = 0.5 (x - x*)' Q (x - x*) with per-sample noise G(x; xi) = grad f(x) + z_xi.

    The z_xi come in plus/minus pairs of signed coordinate vectors with |z| = sigma,
    so the population mean of G is the gradient exactly (pairs cancel bitwise) and
    the per-sample squared deviation is exactly sigma^2.
    """

    name = "noisy_quadratic"

    def __init__(self, Q: np.ndarray, x_star: np.ndarray, sigma: float, N: int, x1: np.ndarray):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got {Q.shape}")
        n = Q.shape[0]
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(Q).max()))):
            raise ValueError("Q must be symmetric")
        if N < 2 or N % 2 != 0:
            raise ValueError(f"N must be even and >= 2, got {N}")
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        self.Q = Q
        self.n = n
        self.x_star = np.asarray(x_star, dtype=float).copy()
        if self.x_star.shape != (n,):
            raise ValueError(f"x_star must have shape ({n},)")
        self.sigma = float(sigma)
        self.sample_count = int(N)
        self._x1 = self._check_x(x1).copy()

        eigs = np.linalg.eigvalsh(Q)
        if eigs[0] < -1e-10 * max(1.0, abs(float(eigs[-1]))):
            raise ValueError("Q must be positive semidefinite")
        self._constants = constants_quadratic(Q, s_values=[1])
        self.L = self._constants.L
        self.L_max = self._constants.L_max
        self.sigma_sq = self.sigma * self.sigma
        # Q is PSD so min f = 0 at x*; the gap from x1 is exact
        self.gap = self.objective(self._x1)

    def noise_vector(self, xi: int) -> np.ndarray:
        """Noise of sample xi: pair p = (xi-1)//2 gives direction e_{p mod n}, odd xi positive."""
        xi = self._check_xi(xi)
        z = np.zeros(self.n)
        if self.sigma == 0.0:
            return z
        pair = (xi - 1) // 2
        sign = 1.0 if xi % 2 == 1 else -1.0
        z[pair % self.n] = sign * self.sigma
        return z

    def objective(self, x: np.ndarray) -> float:
        d = self._check_x(x) - self.x_star
        return 0.5 * float(d @ (self.Q @ d))

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.Q @ (self._check_x(x) - self.x_star)

    def stochastic_gradient(self, x: np.ndarray, xi: int) -> np.ndarray:
        return self.full_gradient(x) + self.noise_vector(xi)

    def l_s(self, s: int) -> float:
        s = max(1, min(int(s), self.n))
        consts = constants_quadratic(self.Q, s_values=[s])
        return consts.L_s[s]


def make_noisy_quadratic(
    n: int = 20,
    kappa: float = 10.0,
    sigma: float = 1.0,
    N: int = 64,
    gap: float = 1.0,
    seed: int = 0,
) -> NoisyQuadratic:
    """Diagonal test instance: eigenvalues linspace(L/kappa, 1), x1 scaled for the wanted gap.

    x1 points along the largest-eigenvalue coordinate so f(x1) equals `gap` exactly
    up to one multiplication and the constants stay closed-form (L = 1).
    """
    if n < 1 or kappa < 1:
        raise ValueError("need n >= 1 and kappa >= 1")
    diag = np.linspace(1.0 / kappa, 1.0, n)
    Q = np.diag(diag)
    x_star = np.zeros(n)
    x1 = np.zeros(n)
    x1[-1] = math.sqrt(2.0 * gap / diag[-1])
    del seed  # instance is fully deterministic; kept for signature uniformity
    return NoisyQuadratic(Q, x_star, sigma, N, x1)


# ------------------------------------------------------------ least squares

class LeastSquares(Problem):
    """f(x) = (1/2N) sum_i (a_i' x - b_i)^2 with per-sample F(x; xi) = 0.5 (a_xi' x - b_xi)^2."""

    name = "least_squares"
    constants_estimated = True  # sigma_sq is regional (measured at x1), L/L_max are exact

    def __init__(self, A: np.ndarray, b: np.ndarray, x1: np.ndarray):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise ValueError(f"incompatible A {A.shape} and b {b.shape}")
        self.A = A
        self.b = b
        self.sample_count, self.n = A.shape
        self._x1 = self._check_x(x1).copy()
        self.H = A.T @ A / self.sample_count
        consts = constants_quadratic(self.H, s_values=[1])
        self.L = consts.L
        self.L_max = consts.L_max
        # exact optimum via the normal equations, so the gap is exact as well
        x_opt, *_ = np.linalg.lstsq(A, b, rcond=None)
        self._f_opt = self.objective(x_opt)
        self.gap = self.objective(self._x1) - self._f_opt
        self.sigma_sq = estimate_sigma_sq(self, self._x1, self.sample_count)

    def objective(self, x: np.ndarray) -> float:
        r = self.A @ self._check_x(x) - self.b
        return 0.5 * float(r @ r) / self.sample_count

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        r = self.A @ self._check_x(x) - self.b
        return self.A.T @ r / self.sample_count

    def stochastic_gradient(self, x: np.ndarray, xi: int) -> np.ndarray:
        xi = self._check_xi(xi)
        a = self.A[xi - 1]
        return a * (float(a @ self._check_x(x)) - self.b[xi - 1])

    def l_s(self, s: int) -> float:
        s = max(1, min(int(s), self.n))
        return constants_quadratic(self.H, s_values=[s]).L_s[s]


def make_least_squares(n: int = 10, N: int = 40, seed: int = 0) -> LeastSquares:
    """Random dense instance with noise in b so the residual at the optimum is nonzero."""
    rng = derive_stream(SeedSpec(seed), 0, "ls-data")
    A = rng.standard_normal((N, n))
    x_true = rng.standard_normal(n)
    b = A @ x_true + 0.5 * rng.standard_normal(N)
    x1 = np.zeros(n)
    return LeastSquares(A, b, x1)


# ------------------------------------------------------------ synthetic MLP

WIDTHS_DEFAULT = (400, 100, 50, 20, 10)


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected net: widths[0] inputs through widths[-1] outputs, tanh hidden
    activations, linear output, squared-error loss.  Weight layout: for each layer,
    a (fan_in x fan_out) matrix followed by its fan_out bias entries, layers in order;
    the default widths give 400*100 + 100*50 + 50*20 + 20*10 weights + (100+50+20+10)
    biases = 46,380 parameters."""

    widths: tuple[int, ...] = WIDTHS_DEFAULT
    sample_count: int = 46_380
    noise_std: float = 1.0

    def __post_init__(self) -> None:
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be >= 2 positive layer sizes, got {self.widths}")
        if self.sample_count < 1:
            raise ValueError(f"sample_count must be >= 1, got {self.sample_count}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")

    @property
    def param_count(self) -> int:
        pairs = list(zip(self.widths, self.widths[1:]))
        return sum(i * o for i, o in pairs) + sum(o for _, o in pairs)


class SyntheticMlp(Problem):
    """Teacher-student regression: targets are the teacher net's outputs plus Gaussian noise.

    Inputs and teacher weights are i.i.d. standard Gaussian.  The student starts from
    a 1/sqrt(fan_in)-scaled Gaussian init (biases zero) so the hidden tanh units are
    unsaturated at x1.  All constants (L, L_max, L_s, sigma_sq, gap) are sampled
    estimates, computed lazily and cached.
    """

    name = "mlp"
    constants_estimated = True

    _EVAL_CHUNK = 8192  # full-sum passes run in fixed-size chunks, summed in chunk order

    def __init__(self, spec: MlpSpec, seed: int):
        self.spec = spec
        self.seed = int(seed)
        self.widths = spec.widths
        self.n = spec.param_count
        self.sample_count = spec.sample_count

        seeds = SeedSpec(self.seed)
        rng_data = derive_stream(seeds, 0, "mlp-data")
        rng_teacher = derive_stream(seeds, 0, "mlp-teacher")
        rng_noise = derive_stream(seeds, 0, "mlp-noise")
        rng_init = derive_stream(seeds, 0, "mlp-init")

        self.X = rng_data.standard_normal((self.sample_count, self.widths[0]))
        theta_star = rng_teacher.standard_normal(self.n)
        clean = self._forward(theta_star, self.X)
        self.Y = clean + spec.noise_std * rng_noise.standard_normal(clean.shape)
        self.theta_star = theta_star

        x1 = np.zeros(self.n)
        for (a, b), (fan_in, fan_out) in zip(self._weight_slices(), self._layer_shapes()):
            x1[a:b] = rng_init.standard_normal(b - a) / math.sqrt(fan_in)
        self._x1 = x1

        self._cache: dict[str, float] = {}

    # ---- parameter layout

    def _layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.widths, self.widths[1:]))

    def _weight_slices(self) -> list[tuple[int, int]]:
        out, pos = [], 0
        for fan_in, fan_out in self._layer_shapes():
            out.append((pos, pos + fan_in * fan_out))
            pos += fan_in * fan_out + fan_out
        return out

    def unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer into the flat vector; W is (fan_in, fan_out)."""
        theta = self._check_x(theta)
        layers, pos = [], 0
        for fan_in, fan_out in self._layer_shapes():
            W = theta[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = theta[pos : pos + fan_out]
            pos += fan_out
            layers.append((W, b))
        return layers

    # ---- network passes

    def _forward(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        layers = self.unpack(theta)
        A = X
        for li, (W, b) in enumerate(layers):
            Z = A @ W + b
            A = np.tanh(Z) if li < len(layers) - 1 else Z
        return A

    def _loss_and_grad(self, theta: np.ndarray, X: np.ndarray, Y: np.ndarray):
        """Summed squared-error loss 0.5 sum |net(x) - y|^2 over the batch, plus its gradient."""
        layers = self.unpack(theta)
        acts = [X]
        A = X
        for li, (W, b) in enumerate(layers):
            Z = A @ W + b
            A = np.tanh(Z) if li < len(layers) - 1 else Z
            acts.append(A)
        resid = acts[-1] - Y
        loss = 0.5 * float(np.sum(resid * resid))

        grad = np.empty(self.n)
        slices = self._weight_slices()
        D = resid
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            a, b_end = slices[li]
            gW = acts[li].T @ D
            gb = D.sum(axis=0)
            grad[a : a + W.size] = gW.ravel()
            grad[a + W.size : a + W.size + gb.size] = gb
            if li > 0:
                D = (D @ W.T) * (1.0 - acts[li] * acts[li])
        return loss, grad

    def objective(self, x: np.ndarray) -> float:
        x = self._check_x(x)
        total = 0.0
        for lo in range(0, self.sample_count, self._EVAL_CHUNK):
            hi = min(lo + self._EVAL_CHUNK, self.sample_count)
            resid = self._forward(x, self.X[lo:hi]) - self.Y[lo:hi]
            total += 0.5 * float(np.sum(resid * resid))
        return total / self.sample_count

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        x = self._check_x(x)
        acc = np.zeros(self.n)
        for lo in range(0, self.sample_count, self._EVAL_CHUNK):
            hi = min(lo + self._EVAL_CHUNK, self.sample_count)
            _, g = self._loss_and_grad(x, self.X[lo:hi], self.Y[lo:hi])
            acc += g
        return acc / self.sample_count

    def stochastic_gradient(self, x: np.ndarray, xi: int) -> np.ndarray:
        xi = self._check_xi(xi)
        _, g = self._loss_and_grad(x, self.X[xi - 1 : xi], self.Y[xi - 1 : xi])
        return g

    def batch_gradient_sum(self, x: np.ndarray, xis: np.ndarray) -> np.ndarray:
        idx = np.asarray(xis, dtype=int)
        if idx.size == 0:
            return np.zeros(self.n)
        if idx.min() < 1 or idx.max() > self.sample_count:
            raise ValueError("sample index outside 1..N in batch")
        _, g = self._loss_and_grad(self._check_x(x), self.X[idx - 1], self.Y[idx - 1])
        return g

    # ---- estimated constants (lazy)

    def _estimate(self, key: str, fn) -> float:
        if key not in self._cache:
            self._cache[key] = float(fn())
        return self._cache[key]

    @property
    def gap(self) -> float:
        # loss is nonnegative, so f(x1) - 0 upper-bounds the true optimality gap
        return self._estimate("gap", lambda: self.objective(self._x1))

    @property
    def L(self) -> float:
        return self._estimate("L", lambda: estimate_lipschitz(self, s=None))

    @property
    def L_max(self) -> float:
        return self._estimate("L_max", lambda: estimate_lipschitz(self, s=1))

    @property
    def sigma_sq(self) -> float:
        budget = min(self.sample_count, 512)
        return self._estimate("sigma_sq", lambda: estimate_sigma_sq(self, self._x1, budget))

    def l_s(self, s: int) -> float:
        s = max(1, min(int(s), self.n))
        return self._estimate(f"L_{s}", lambda: estimate_lipschitz(self, s=s))


def make_synthetic_mlp(spec: MlpSpec | None = None, seed: int = 0) -> SyntheticMlp:
    """Deterministic instance for a given seed; default spec has 46,380 parameters."""
    return SyntheticMlp(spec or MlpSpec(), seed)


# ------------------------------------------------------------ estimators

def estimate_sigma_sq(p: Problem, x: np.ndarray, sample_budget: int) -> float:
    """Empirical mean of |G(x; xi) - grad f(x)|^2 over the first sample_budget samples."""
    if sample_budget < 1:
        raise ValueError(f"sample_budget must be >= 1, got {sample_budget}")
    if sample_budget > p.sample_count:
        raise ValueError(f"sample_budget {sample_budget} exceeds N={p.sample_count}")
    g = p.full_gradient(x)
    total = 0.0
    for xi in range(1, sample_budget + 1):
        d = p.stochastic_gradient(x, xi) - g
        total += float(d @ d)
    return total / sample_budget


def estimate_lipschitz(
    p: Problem,
    s: int | None = None,
    trials: int = 24,
    radius: float = 0.1,
    eval_samples: int = 512,
    seed: int = 2024,
) -> float:
    """Sampled lower estimate of the gradient Lipschitz constant near x1.

    Maximizes |grad(x) - grad(y)| / |x - y| over random pairs around x1; when s is
    given, the perturbation x - y is confined to a random support of that size
    (the support-restricted constant).  Gradients run over a fixed subsample for
    speed, so treat the result as an estimate, never a guarantee.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = derive_stream(SeedSpec(seed), 0, "lipschitz-probe")
    x1 = p.x1
    m = min(eval_samples, p.sample_count)
    xis = np.arange(1, m + 1)

    def grad(x):
        return p.batch_gradient_sum(x, xis) / m

    best = 0.0
    for _ in range(trials):
        x = x1 + radius * rng.standard_normal(p.n)
        if s is None:
            h = rng.standard_normal(p.n)
        else:
            h = np.zeros(p.n)
            support = rng.choice(p.n, size=min(s, p.n), replace=False)
            h[support] = rng.standard_normal(len(support))
        h *= radius / float(np.linalg.norm(h))
        num = float(np.linalg.norm(grad(x + h) - grad(x)))
        best = max(best, num / radius)
    return best
