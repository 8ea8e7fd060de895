import numpy as np
import pytest

from hdlaplace.tensor_core import SymTensor


def random_symmetric(d, k, seed, scale=1.0):
    """Dense symmetric tensor built by averaging a Gaussian array over permutations."""
    rng = np.random.default_rng(seed)
    return SymTensor.from_dense(scale * rng.standard_normal((d,) * k), check_symmetric=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def polynomial_problem(H, T3, T4, g1=None, n=100.0, L=1):
    """u(x) = x'Hx/2 + <T3, x^3>/6 + <T4, x^4>/24 around x0 = 0, g(x) = 1 + <g1, x>.

    Built from dense arrays so that derivative tensors at any point come
    from plain einsum contractions.
    """
    from hdlaplace.problem import ProblemSpec

    H = np.asarray(H, dtype=float)
    T3 = np.asarray(T3, dtype=float)
    T4 = np.asarray(T4, dtype=float)
    d = H.shape[0]
    g1 = np.zeros(d) if g1 is None else np.asarray(g1, dtype=float)

    def u(X):
        X = np.atleast_2d(X)
        return (0.5 * np.einsum("ni,ij,nj->n", X, H, X)
                + np.einsum("ijk,ni,nj,nk->n", T3, X, X, X) / 6
                + np.einsum("ijkl,ni,nj,nk,nl->n", T4, X, X, X, X) / 24)

    def u_derivs(k, x):
        x = np.asarray(x, dtype=float)
        if k == 0:
            return SymTensor(0, d, [float(u(x[None, :])[0])])
        if k == 1:
            arr = H @ x + np.einsum("ijk,j,k->i", T3, x, x) / 2 + np.einsum("ijkl,j,k,l->i", T4, x, x, x) / 6
        elif k == 2:
            arr = H + np.einsum("ijk,k->ij", T3, x) + np.einsum("ijkl,k,l->ij", T4, x, x) / 2
        elif k == 3:
            arr = T3 + np.einsum("ijkl,l->ijk", T4, x)
        elif k == 4:
            arr = T4
        else:
            return SymTensor.zeros(k, d)
        return SymTensor.from_dense(arr, check_symmetric=False)

    def g(X):
        return 1.0 + np.atleast_2d(X) @ g1

    def g_derivs(k, x):
        if k == 0:
            return SymTensor(0, d, [float(g(np.asarray(x)[None, :])[0])])
        if k == 1:
            return SymTensor(1, d, g1.copy())
        return SymTensor.zeros(k, d)

    return ProblemSpec(d=d, n=n, u=u, g=g, x0=np.zeros(d), u_derivs=u_derivs, g_derivs=g_derivs, L=L)


def symmetrize(A):
    import itertools

    k = A.ndim
    perms = list(itertools.permutations(range(k)))
    return sum(A.transpose(p) for p in perms) / len(perms)


def quadratic_g(d, seed):
    """g(x) = a + b.(x - x0) + (x - x0)^T C (x - x0) / 2 with its derivative tensors."""
    rng = np.random.default_rng(seed)
    a = 1.0 + rng.random()
    b = rng.standard_normal(d)
    A = rng.standard_normal((d, d))
    C = (A + A.T) / 2
    state = {}

    def g(X):
        Y = np.atleast_2d(X) - state["x0"]
        return a + Y @ b + 0.5 * np.einsum("ij,jk,ik->i", Y, C, Y)

    def gd(k, x):
        y = np.asarray(x, dtype=float) - state["x0"]
        if k == 0:
            return SymTensor(0, d, [float(a + b @ y + 0.5 * y @ C @ y)])
        if k == 1:
            return SymTensor(1, d, b + C @ y)
        if k == 2:
            return SymTensor.from_dense(C)
        return SymTensor.zeros(k, d)

    return state, (g, gd), (a, b, C)


# -- acceptance verdicts ------------------------------------------------------

ACCEPTANCE = {}


def record_acceptance(number, ok, detail):
    """Store one verdict line; they are printed together at the end of the run."""
    line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
