"""scikit-learn style wrapper around corpus preparation, training and ranking."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .ablation import VARIANTS, build_variant
from .alignment import Tokens, build_bundle, collate
from .corpus import Corpus, Domain, Interaction, Split, preprocess, split_leave_one_out
from .errors import ConfigError, DataError
from .evaluator import evaluate
from .model import ModelConfig
from .trainer import TrainConfig, train


def check_interactions(X) -> Split:
    """Accept a raw interaction list, a Corpus or a Split; return a Split."""
    if isinstance(X, Split):
        return X
    if isinstance(X, Corpus):
        return split_leave_one_out(X)
    X = list(X)
    if not X:
        raise DataError("no interactions given")
    if not all(isinstance(x, Interaction) for x in X):
        raise DataError("expected a sequence of Interaction records, a Corpus or a Split")
    return split_leave_one_out(preprocess(X))


def check_history(corpus: Corpus, history) -> Tokens:
    """Map ``[(raw_item_id, domain), ...]`` (chronological) to model tokens."""
    if isinstance(history, Tokens):
        return history
    index = {(Domain.A, it): i + 1 for i, it in enumerate(corpus.item_ids_A)}
    index.update({(Domain.B, it): corpus.n_items_A + i + 1 for i, it in enumerate(corpus.item_ids_B)})
    pairs = []
    for item, dom in history:
        key = (Domain.parse(dom), item)
        if key not in index:
            raise DataError(f"unknown item {item!r} in domain {key[0].name}")
        pairs.append((index[key], key[0].name))
    if not pairs:
        raise DataError("empty history")
    return Tokens.from_pairs(pairs)


class ABXIRecommender(BaseEstimator):
    """Cross-domain next-item recommender.

    ``fit`` takes raw interactions (or a prepared Corpus/Split), ``predict``
    returns the top-``k`` unseen items of a target domain for each history and
    ``score`` is the summed per-domain test MRR on the fitted split.
    """

    def __init__(self, variant="ABXI", d=256, n_heads=2, n_layers=1, r_d=64, r_i=64, dropout=0.3, tau=0.75,
                 n_neg=128, max_len=50, lr=1e-3, weight_decay=0.0, max_epochs=500, warmup_epochs=5,
                 batch_size=128, eval_negatives=999, eval_every=1, seed=3407):
        self.variant = variant
        self.d = d
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.r_d = r_d
        self.r_i = r_i
        self.dropout = dropout
        self.tau = tau
        self.n_neg = n_neg
        self.max_len = max_len
        self.lr = lr
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.warmup_epochs = warmup_epochs
        self.batch_size = batch_size
        self.eval_negatives = eval_negatives
        self.eval_every = eval_every
        self.seed = seed

    def _configs(self, n_items: int):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        base = ModelConfig(n_items=n_items, d=self.d, n_heads=self.n_heads, n_layers=self.n_layers, r_d=self.r_d,
                           r_i=self.r_i, dropout=self.dropout, tau=self.tau, n_neg=self.n_neg, max_len=self.max_len)
        tcfg = TrainConfig(lr=self.lr, weight_decay=self.weight_decay, max_epochs=self.max_epochs,
                           warmup_epochs=self.warmup_epochs, batch_size=self.batch_size,
                           eval_negatives=self.eval_negatives, eval_every=self.eval_every)
        return build_variant(self.variant, base), tcfg

    def fit(self, X, y=None):
        split = check_interactions(X)
        model_cfg, train_cfg = self._configs(split.corpus.n_items)
        result = train(split, model_cfg, train_cfg, seed=self.seed)
        self.split_ = split
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("ABXIRecommender is not fitted; call fit first")

    @torch.no_grad()
    def predict_scores(self, histories, domain) -> np.ndarray:
        """Scores over all items of ``domain`` (columns follow ``corpus.domain_items``)."""
        self._check_fitted()
        dom = Domain.parse(domain)
        corpus = self.split_.corpus
        cfg = self.model_.cfg
        toks = [check_history(corpus, h) for h in histories]
        # a placeholder target of the requested domain makes the last slot supervised
        placeholder = int(corpus.domain_items(dom)[0])
        bundles = []
        for t in toks:
            ext = Tokens(np.append(t.items, placeholder), np.append(t.domains, int(dom)))
            bundles.append(build_bundle(ext, cfg.max_len, cfg.alignment))
        self.model_.eval()
        rec_A, rec_B = self.model_.forward_batch(collate(bundles, cfg.max_len))
        h = (rec_A if dom is Domain.A else rec_B)[:, -1]
        items = torch.from_numpy(corpus.domain_items(dom))
        return (h @ self.model_.item_emb.weight[items].T).numpy()

    def predict(self, histories, domain, k: int = 10) -> list[list[str]]:
        """Top-``k`` raw item ids per history, excluding items already in it."""
        scores = self.predict_scores(histories, domain)
        corpus = self.split_.corpus
        items = corpus.domain_items(domain)
        out = []
        for row, hist in zip(scores, histories):
            seen = np.isin(items, check_history(corpus, hist).items)
            row = np.where(seen, -np.inf, row)
            top = np.argsort(-row, kind="stable")[:k]
            out.append([corpus.raw_item_id(int(items[j])) for j in top if np.isfinite(row[j])])
        return out

    def evaluate(self, mode="test"):
        self._check_fitted()
        return evaluate(self.model_, self.split_, mode, self.seed, self.eval_negatives)

    def score(self, X=None, y=None) -> float:
        self._check_fitted()
        if X is None:
            return self.evaluate("test").mrr_sum()
        split = check_interactions(X)
        if split.corpus.n_items != self.model_.cfg.n_items:
            raise DataError("corpus item vocabulary differs from the fitted one")
        return evaluate(self.model_, split, "test", self.seed, self.eval_negatives).mrr_sum()
