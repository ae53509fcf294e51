"""
Homoscedastic Normal BART predictive for nonconformity scores.

A sum of m regression trees is sampled by Bayesian backfitting: each tree in
turn gets a grow / prune / change Metropolis-Hastings move with its leaf
means integrated out, then fresh leaf means, then sigma^2 is drawn from its
inverse-chi^2 conditional. Kept draws are flattened into node tables so the
predictive F(s | x, D) = mean_d Phi((s - f_d(x)) / sigma_d) is vectorized.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.special import ndtr

from epicscore.models.config import BartConfig, PredictiveKind
from epicscore.services.predictive import PredictiveCdfModel
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


# ----------------------------------------------------------------------------
# Tree structure
# ----------------------------------------------------------------------------

class Node:
    """Tree node holding the indices of the training rows it contains."""

    __slots__ = ("depth", "idx", "var", "cut", "left", "right", "value")

    def __init__(self, depth: int, idx: np.ndarray, value: float = 0.0):
        self.depth = depth
        self.idx = idx
        self.var = -1
        self.cut = 0.0
        self.left: Optional["Node"] = None
        self.right: Optional["Node"] = None
        self.value = value

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def is_prunable(self) -> bool:
        """Internal node whose children are both leaves."""
        return not self.is_leaf and self.left.is_leaf and self.right.is_leaf


class Tree:
    """A single regression tree."""

    def __init__(self, n: int, value: float = 0.0):
        self.root = Node(0, np.arange(n), value)

    def nodes(self) -> List[Node]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            if not node.is_leaf:
                stack.extend((node.right, node.left))
        return out

    def leaves(self) -> List[Node]:
        return [node for node in self.nodes() if node.is_leaf]

    def prunable(self) -> List[Node]:
        return [node for node in self.nodes() if node.is_prunable]

    def fitted(self, n: int) -> np.ndarray:
        """Leaf value of every training row."""
        out = np.empty(n)
        for leaf in self.leaves():
            out[leaf.idx] = leaf.value
        return out

    def flatten(self) -> Tuple[np.ndarray, ...]:
        """(var, cut, left, right, value) arrays in pre-order; children by local index."""
        nodes = self.nodes()
        position = {id(node): i for i, node in enumerate(nodes)}
        var = np.array([node.var for node in nodes], dtype=np.int64)
        cut = np.array([node.cut for node in nodes], dtype=float)
        left = np.array(
            [position[id(node.left)] if not node.is_leaf else -1 for node in nodes], dtype=np.int64
        )
        right = np.array(
            [position[id(node.right)] if not node.is_leaf else -1 for node in nodes], dtype=np.int64
        )
        value = np.array([node.value for node in nodes], dtype=float)
        return var, cut, left, right, value


# ----------------------------------------------------------------------------
# Likelihood and prior terms
# ----------------------------------------------------------------------------

def leaf_log_marginal(residuals: np.ndarray, sigma2: float, tau2: float) -> float:
    """
    log p(r) for r_i = mu + e_i, mu ~ N(0, tau2), e_i ~ N(0, sigma2), mu integrated out.
    """
    n = residuals.size
    if n == 0:
        return 0.0
    total = float(np.sum(residuals))
    sum_sq = float(np.sum(residuals ** 2))
    denom = sigma2 + n * tau2
    return (
        -0.5 * n * (_LOG_2PI + math.log(sigma2))
        + 0.5 * math.log(sigma2 / denom)
        - sum_sq / (2.0 * sigma2)
        + tau2 * total ** 2 / (2.0 * sigma2 * denom)
    )


def tree_log_likelihood(tree: Tree, residuals: np.ndarray, sigma2: float, tau2: float) -> float:
    """Sum of integrated leaf log marginals."""
    return sum(leaf_log_marginal(residuals[leaf.idx], sigma2, tau2) for leaf in tree.leaves())


def split_probability(depth: int, alpha: float, beta: float) -> float:
    """Prior probability that a node at this depth is internal: alpha (1 + d)^-beta."""
    return alpha * (1.0 + depth) ** (-beta)


def sample_leaf_value(
    residuals: np.ndarray, sigma2: float, tau2: float, rng: np.random.Generator
) -> float:
    """Draw mu from its Normal full conditional."""
    n = residuals.size
    denom = sigma2 + n * tau2
    mean = tau2 * float(np.sum(residuals)) / denom
    var = sigma2 * tau2 / denom
    return float(mean + math.sqrt(var) * rng.standard_normal())


# ----------------------------------------------------------------------------
# Sampler
# ----------------------------------------------------------------------------

@dataclass
class MoveStats:
    """Proposal and acceptance counts per move type."""

    proposed_grow: int = 0
    accepted_grow: int = 0
    proposed_prune: int = 0
    accepted_prune: int = 0
    proposed_change: int = 0
    accepted_change: int = 0

    def rate(self, move: str) -> float:
        proposed = getattr(self, f"proposed_{move}")
        return getattr(self, f"accepted_{move}") / proposed if proposed else 0.0

    def __str__(self) -> str:
        return ", ".join(
            f"{move} {self.rate(move):.2f} ({getattr(self, f'proposed_{move}')})"
            for move in ("grow", "prune", "change")
        )


class TreeSampler:
    """
    Metropolis-Hastings tree moves for one chain.

    Split rules are drawn uniformly over the variables that still have a cut
    point giving two non-empty children at the node, then uniformly over
    those cut points. The rule prior uses the same distribution, so rule
    terms cancel in every acceptance ratio.
    """

    def __init__(
        self,
        Z: np.ndarray,
        cutpoints: List[np.ndarray],
        config: BartConfig,
        tau2: float,
        rng: np.random.Generator
    ):
        self.Z = Z
        self.cutpoints = cutpoints
        self.config = config
        self.tau2 = tau2
        self.rng = rng
        self.stats = MoveStats()

    def p_split(self, depth: int) -> float:
        return split_probability(depth, self.config.split_alpha, self.config.split_beta)

    def valid_rules(self, node: Node) -> List[Tuple[int, np.ndarray]]:
        """(variable, admissible cut points) pairs for a node."""
        rules = []
        for var, cuts in enumerate(self.cutpoints):
            values = self.Z[node.idx, var]
            if values.size < 2:
                continue
            admissible = cuts[(cuts >= values.min()) & (cuts < values.max())]
            if admissible.size:
                rules.append((var, admissible))
        return rules

    def draw_rule(self, node: Node) -> Optional[Tuple[int, float]]:
        rules = self.valid_rules(node)
        if not rules:
            return None
        var, cuts = rules[self.rng.integers(len(rules))]
        return var, float(cuts[self.rng.integers(cuts.size)])

    def _children(self, node: Node, var: int, cut: float) -> Tuple[Node, Node]:
        go_left = self.Z[node.idx, var] <= cut
        return (
            Node(node.depth + 1, node.idx[go_left]),
            Node(node.depth + 1, node.idx[~go_left]),
        )

    def grow_log_ratio(
        self,
        tree: Tree,
        node: Node,
        left: Node,
        right: Node,
        residuals: np.ndarray,
        sigma2: float
    ) -> float:
        """
        log MH ratio for splitting leaf `node` into (left, right).

        P_prune(T*) b / (P_grow(T) w*) times the prior ratio
        P_split(d) (1 - P_split(d + 1))^2 / (1 - P_split(d)) times the
        integrated likelihood ratio.
        """
        n_leaves = len(tree.leaves())
        n_prunable_after = len(tree.prunable()) + 1
        if node.depth >= 1 and _parent_becomes_unprunable(tree, node):
            n_prunable_after -= 1
        p_grow = self.config.p_grow if n_leaves > 1 else 1.0

        d = node.depth
        log_prior = (
            math.log(self.p_split(d))
            + 2.0 * math.log(1.0 - self.p_split(d + 1))
            - math.log(1.0 - self.p_split(d))
        )
        log_proposal = (
            math.log(self.config.p_prune) + math.log(n_leaves)
            - math.log(p_grow) - math.log(n_prunable_after)
        )
        log_lik = (
            leaf_log_marginal(residuals[left.idx], sigma2, self.tau2)
            + leaf_log_marginal(residuals[right.idx], sigma2, self.tau2)
            - leaf_log_marginal(residuals[node.idx], sigma2, self.tau2)
        )
        return log_proposal + log_prior + log_lik

    def prune_log_ratio(self, tree: Tree, node: Node, residuals: np.ndarray, sigma2: float) -> float:
        """log MH ratio for collapsing prunable `node` into a leaf."""
        n_prunable = len(tree.prunable())
        n_leaves_after = len(tree.leaves()) - 1
        p_grow_after = self.config.p_grow if n_leaves_after > 1 else 1.0

        d = node.depth
        log_prior = (
            math.log(1.0 - self.p_split(d))
            - math.log(self.p_split(d))
            - 2.0 * math.log(1.0 - self.p_split(d + 1))
        )
        log_proposal = (
            math.log(p_grow_after) + math.log(n_prunable)
            - math.log(self.config.p_prune) - math.log(n_leaves_after)
        )
        log_lik = (
            leaf_log_marginal(residuals[node.idx], sigma2, self.tau2)
            - leaf_log_marginal(residuals[node.left.idx], sigma2, self.tau2)
            - leaf_log_marginal(residuals[node.right.idx], sigma2, self.tau2)
        )
        return log_proposal + log_prior + log_lik

    def change_log_ratio(
        self,
        node: Node,
        left: Node,
        right: Node,
        residuals: np.ndarray,
        sigma2: float
    ) -> float:
        """
        log MH ratio for replacing the rule of prunable `node` by one giving (left, right).

        Proposal and tree-prior terms cancel, leaving the likelihood ratio.
        """
        return (
            leaf_log_marginal(residuals[left.idx], sigma2, self.tau2)
            + leaf_log_marginal(residuals[right.idx], sigma2, self.tau2)
            - leaf_log_marginal(residuals[node.left.idx], sigma2, self.tau2)
            - leaf_log_marginal(residuals[node.right.idx], sigma2, self.tau2)
        )

    def _accept(self, log_ratio: float) -> bool:
        return math.log(self.rng.random() + 1e-300) < log_ratio

    def step(self, tree: Tree, residuals: np.ndarray, sigma2: float) -> None:
        """One MH move on `tree` followed by fresh leaf values."""
        if tree.root.is_leaf:
            move = "grow"
        else:
            u = self.rng.random()
            if u < self.config.p_grow:
                move = "grow"
            elif u < self.config.p_grow + self.config.p_prune:
                move = "prune"
            else:
                move = "change"

        if move == "grow":
            self._grow(tree, residuals, sigma2)
        elif move == "prune":
            self._prune(tree, residuals, sigma2)
        else:
            self._change(tree, residuals, sigma2)

        for leaf in tree.leaves():
            leaf.value = sample_leaf_value(residuals[leaf.idx], sigma2, self.tau2, self.rng)

    def _grow(self, tree: Tree, residuals: np.ndarray, sigma2: float) -> None:
        self.stats.proposed_grow += 1
        leaves = tree.leaves()
        node = leaves[self.rng.integers(len(leaves))]
        rule = self.draw_rule(node)
        if rule is None:
            return
        var, cut = rule
        left, right = self._children(node, var, cut)
        if self._accept(self.grow_log_ratio(tree, node, left, right, residuals, sigma2)):
            node.var, node.cut, node.left, node.right = var, cut, left, right
            self.stats.accepted_grow += 1

    def _prune(self, tree: Tree, residuals: np.ndarray, sigma2: float) -> None:
        self.stats.proposed_prune += 1
        candidates = tree.prunable()
        node = candidates[self.rng.integers(len(candidates))]
        if self._accept(self.prune_log_ratio(tree, node, residuals, sigma2)):
            node.var, node.cut, node.left, node.right = -1, 0.0, None, None
            self.stats.accepted_prune += 1

    def _change(self, tree: Tree, residuals: np.ndarray, sigma2: float) -> None:
        self.stats.proposed_change += 1
        candidates = tree.prunable()
        node = candidates[self.rng.integers(len(candidates))]
        rule = self.draw_rule(node)
        if rule is None:
            return
        var, cut = rule
        left, right = self._children(node, var, cut)
        if self._accept(self.change_log_ratio(node, left, right, residuals, sigma2)):
            node.var, node.cut, node.left, node.right = var, cut, left, right
            self.stats.accepted_change += 1


def _parent_becomes_unprunable(tree: Tree, leaf: Node) -> bool:
    """True if growing `leaf` turns its prunable parent into a non-prunable node."""
    for node in tree.nodes():
        if not node.is_leaf and (node.left is leaf or node.right is leaf):
            return node.is_prunable
    return False


def make_cutpoints(Z: np.ndarray, n_cutpoints: int) -> List[np.ndarray]:
    """Candidate split values per feature: unique interior quantiles."""
    levels = np.linspace(0.0, 1.0, n_cutpoints + 2)[1:-1]
    cutpoints = []
    for j in range(Z.shape[1]):
        values = np.unique(Z[:, j])
        if values.size <= n_cutpoints + 1:
            cuts = 0.5 * (values[:-1] + values[1:])
        else:
            cuts = np.unique(np.quantile(Z[:, j], levels))
        cutpoints.append(cuts)
    return cutpoints


def sigma_prior_scale(z: np.ndarray, nu: float, quantile: float) -> float:
    """lambda such that P(sigma < sd(z)) = quantile under sigma^2 ~ nu lambda / chi2_nu."""
    sd = float(np.std(z)) or 1.0
    return sd ** 2 * stats.chi2.ppf(1.0 - quantile, nu) / nu


@dataclass
class PosteriorDraws:
    """Flattened kept draws: one node table, trees rooted at `roots` (draw-major)."""

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray      # (n_draws, n_trees) global node indices
    sigma: np.ndarray      # (n_draws,)

    @property
    def n_draws(self) -> int:
        return int(self.sigma.size)

    def tree_sums(self, Z: np.ndarray) -> np.ndarray:
        """Sum-of-trees prediction of every draw, shape (n_draws, m)."""
        n_draws, n_trees = self.roots.shape
        m = Z.shape[0]
        node = np.broadcast_to(self.roots.reshape(-1, 1), (n_draws * n_trees, m)).copy()
        columns = np.arange(m)[None, :]
        while True:
            var = self.var[node]
            internal = var >= 0
            if not np.any(internal):
                break
            x = Z[columns, np.where(internal, var, 0)]
            go_left = x <= self.cut[node]
            child = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, child, node)
        return self.value[node].reshape(n_draws, n_trees, m).sum(axis=1)

    @classmethod
    def concatenate(cls, parts: List["PosteriorDraws"]) -> "PosteriorDraws":
        """Merge chains in order."""
        offset = 0
        var, cut, left, right, value, roots = [], [], [], [], [], []
        for part in parts:
            var.append(part.var)
            cut.append(part.cut)
            left.append(np.where(part.left >= 0, part.left + offset, -1))
            right.append(np.where(part.right >= 0, part.right + offset, -1))
            value.append(part.value)
            roots.append(part.roots + offset)
            offset += part.var.size
        return cls(
            var=np.concatenate(var), cut=np.concatenate(cut),
            left=np.concatenate(left), right=np.concatenate(right),
            value=np.concatenate(value), roots=np.concatenate(roots),
            sigma=np.concatenate([part.sigma for part in parts]),
        )


class _DrawRecorder:
    def __init__(self):
        self.var, self.cut, self.left, self.right, self.value = [], [], [], [], []
        self.roots: List[List[int]] = []
        self.sigma: List[float] = []
        self.size = 0

    def record(self, trees: List[Tree], sigma: float) -> None:
        roots = []
        for tree in trees:
            var, cut, left, right, value = tree.flatten()
            roots.append(self.size)
            self.var.append(var)
            self.cut.append(cut)
            self.left.append(np.where(left >= 0, left + self.size, -1))
            self.right.append(np.where(right >= 0, right + self.size, -1))
            self.value.append(value)
            self.size += var.size
        self.roots.append(roots)
        self.sigma.append(sigma)

    def draws(self) -> PosteriorDraws:
        return PosteriorDraws(
            var=np.concatenate(self.var), cut=np.concatenate(self.cut),
            left=np.concatenate(self.left), right=np.concatenate(self.right),
            value=np.concatenate(self.value),
            roots=np.asarray(self.roots, dtype=np.int64),
            sigma=np.asarray(self.sigma, dtype=float),
        )


def run_chain(
    Z: np.ndarray,
    z: np.ndarray,
    config: BartConfig,
    rng: np.random.Generator
) -> Tuple[PosteriorDraws, MoveStats]:
    """
    Bayesian backfitting MCMC for one chain.

    Returns:
        Kept draws (every keep_every-th iteration after burn-in) and move stats.
    """
    n = z.size
    m = config.n_trees
    z_range = float(np.max(z) - np.min(z)) or 1.0
    tau2 = ((z_range / 2.0) / (config.leaf_prior_k * math.sqrt(m))) ** 2
    nu = config.sigma_nu
    lam = sigma_prior_scale(z, nu, config.sigma_quantile)

    trees = [Tree(n, float(np.mean(z)) / m) for _ in range(m)]
    fits = [tree.fitted(n) for tree in trees]
    total = np.sum(fits, axis=0)
    sigma2 = float(np.var(z)) or 1.0

    sampler = TreeSampler(Z, make_cutpoints(Z, config.n_cutpoints), config, tau2, rng)
    recorder = _DrawRecorder()

    for iteration in range(config.burn_in + config.n_draws):
        for j, tree in enumerate(trees):
            residuals = z - (total - fits[j])
            sampler.step(tree, residuals, sigma2)
            new_fit = tree.fitted(n)
            total += new_fit - fits[j]
            fits[j] = new_fit

        ssr = float(np.sum((z - total) ** 2))
        sigma2 = (nu * lam + ssr) / rng.chisquare(nu + n)

        kept = iteration - config.burn_in
        if kept >= 0 and kept % config.keep_every == 0:
            recorder.record(trees, math.sqrt(sigma2))

    return recorder.draws(), sampler.stats


class BartModel(PredictiveCdfModel):
    """Sum-of-trees predictive averaged over posterior draws."""

    kind = PredictiveKind.BART_LITE

    def __init__(self, config: Optional[BartConfig] = None, seed: int = 0):
        super().__init__(seed)
        self.config = config or BartConfig()
        self.draws: Optional[PosteriorDraws] = None

    def _fit(self, Z: np.ndarray, z: np.ndarray) -> None:
        children = np.random.SeedSequence(self.seed).spawn(self.config.n_chains)
        parts = []
        for chain, child in enumerate(children):
            draws, move_stats = run_chain(Z, z, self.config, np.random.default_rng(child))
            logger.debug(f"BART chain {chain}: acceptance {move_stats}")
            parts.append(draws)
        self.draws = PosteriorDraws.concatenate(parts)

    def _prepare(self, Z: np.ndarray):
        return self.draws.tree_sums(Z), self.draws.sigma

    def _cdf_from(self, state, z):
        sums, sigma = state
        z = np.asarray(z, dtype=float)
        return np.mean(ndtr((z[None, :] - sums) / sigma[:, None]), axis=0)

    def _bracket_hint(self, state, m):
        sums, sigma = state
        return sums.mean(axis=0), sums.std(axis=0) + float(np.mean(sigma))

    def posterior_mean(self, X) -> np.ndarray:
        """Posterior mean of the sum of trees, original units."""
        sums, _ = self.prepare(X)
        return self.score_normalizer.inverse(sums.mean(axis=0))

    def export_state(self):
        params = {"config": self.config.model_dump()}
        arrays = {
            name: getattr(self.draws, name)
            for name in ("var", "cut", "left", "right", "value", "roots", "sigma")
        }
        return params, arrays

    def restore_state(self, params, arrays) -> None:
        self.config = BartConfig(**params["config"])
        self.draws = PosteriorDraws(**{name: np.asarray(arrays[name]) for name in (
            "var", "cut", "left", "right", "value", "roots", "sigma"
        )})
