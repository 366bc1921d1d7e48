from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TooFewUsers


@dataclass(frozen=True)
class SplitSpec:
    train_users: tuple[str, ...]
    test_users: tuple[str, ...]
    val_users: tuple[str, ...]
    seed: int

    def as_dict(self) -> dict:
        return {"train": list(self.train_users), "test": list(self.test_users),
                "val": list(self.val_users), "seed": self.seed}


def split_users(user_ids, seed: int) -> SplitSpec:
    """Seeded 70/20/10 user split: ``floor(n/5)`` test users, ``ceil(n/10)``
    validation users, the rest for training (35/10/5 at 50 users)."""
    users = sorted(set(str(u) for u in user_ids))
    n = len(users)
    if n < 10:
        raise TooFewUsers(f"need at least 10 users, got {n}")
    n_test = n * 2 // 10
    n_val = -(-n // 10)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [users[i] for i in order]
    test = tuple(sorted(shuffled[:n_test]))
    val = tuple(sorted(shuffled[n_test:n_test + n_val]))
    train = tuple(sorted(shuffled[n_test + n_val:]))
    return SplitSpec(train, test, val, seed)
