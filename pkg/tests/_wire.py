"""Seeded generator of structurally valid protocol messages.

Shared by the codec unit tests and the acceptance round-trip check. Takes a
random.Random so every caller controls its own seed.
"""

from __future__ import annotations

import random

from chronorpc.protocol import (
    CancelSchedule,
    Message,
    Operation,
    RpcMessage,
    RpcReply,
    ScheduleNotification,
)

_ALPHABET = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_."
_UNICODE_EXTRAS = "äöüßéañチλ時計 \t\"\\/{}[]:,"
_ERROR_CODES = (
    "schedule-out-of-range",
    "unknown-operation",
    "unknown-message-id",
    "duplicate-message-id",
    "already-executed",
    "unknown-key",
    "cancelled",
    "invalid-params",
)


def _ident(rng: random.Random) -> str:
    return "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(1, 12)))


def _text(rng: random.Random) -> str:
    pool = _ALPHABET + _UNICODE_EXTRAS
    return "".join(rng.choice(pool) for _ in range(rng.randint(0, 20)))


def _params(rng: random.Random) -> dict[str, str]:
    return {_ident(rng): _text(rng) for _ in range(rng.randint(0, 4))}


def _timestamp(rng: random.Random) -> int:
    # Deliberately includes negative and far-future instants.
    return rng.randint(-(2**62), 2**62)


def random_message(rng: random.Random) -> Message:
    kind = rng.randrange(4)
    mid = _ident(rng)
    if kind == 0:
        return RpcMessage(
            message_id=mid,
            operation=Operation(_ident(rng), _params(rng)),
            scheduled_time=_timestamp(rng) if rng.random() < 0.7 else None,
            get_time=rng.random() < 0.5,
        )
    if kind == 1:
        if rng.random() < 0.5:
            return RpcReply.make_ok(
                mid,
                execution_time=_timestamp(rng) if rng.random() < 0.6 else None,
                params=_params(rng) if rng.random() < 0.4 else None,
            )
        reply = RpcReply.make_error(
            mid,
            rng.choice(_ERROR_CODES),
            detail=_text(rng) if rng.random() < 0.5 else "",
        )
        if rng.random() < 0.3:
            reply = RpcReply(
                reply.message_id,
                reply.status,
                reply.error_code,
                reply.error_detail,
                None,
                _params(rng),
            )
        return reply
    if kind == 2:
        return ScheduleNotification(mid, accepted=rng.random() < 0.5)
    return CancelSchedule(mid, target_id=_ident(rng))
