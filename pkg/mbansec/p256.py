# mbansec/p256.py
"""Affine P-256 point addition, used to blind public keys with a password point."""
from __future__ import annotations

from typing import Optional

from .crypto_suite import A, P, Point, keypair_from_scalar, N

# None stands for the point at infinity
MaybePoint = Optional[Point]


def neg(point: MaybePoint) -> MaybePoint:
    if point is None:
        return None
    x, y = point
    return x, (-y) % P


def add(p1: MaybePoint, p2: MaybePoint) -> MaybePoint:
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    x1, y1 = p1
    x2, y2 = p2
    if x1 == x2:
        if (y1 + y2) % P == 0:
            return None
        # doubling
        slope = (3 * x1 * x1 + A) * pow(2 * y1, -1, P) % P
    else:
        slope = (y2 - y1) * pow(x2 - x1, -1, P) % P
    x3 = (slope * slope - x1 - x2) % P
    y3 = (slope * (x1 - x3) - y1) % P
    return x3, y3


def sub(p1: MaybePoint, p2: MaybePoint) -> MaybePoint:
    return add(p1, neg(p2))


def base_mult(scalar: int) -> Point:
    """scalar·G, computed by the backend."""
    return keypair_from_scalar(scalar % N).public
