"""Minimal estimator plumbing so the fit/transform/predict classes compose
with scikit-learn style tooling (grid search, cloning, pipelines) without
pulling sklearn in as a dependency.
"""

from __future__ import annotations

import inspect


class ParamsMixin:
    """get_params/set_params over the keyword arguments of ``__init__``.

    Subclasses must store every constructor argument on ``self`` under the
    same name (the sklearn convention).
    """

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [
            name
            for name, p in sig.parameters.items()
            if name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        ]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters: {sorted(valid)}"
                )
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def check_fitted(estimator, attribute: str) -> None:
    """Raise if ``estimator`` has not been fitted (attribute missing/None)."""
    if getattr(estimator, attribute, None) is None:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )


def check_equal_length(a, b, what: str = "inputs"):
    if len(a) != len(b):
        from .errors import LengthMismatchError

        raise LengthMismatchError(f"{what}: {len(a)} vs {len(b)}")
