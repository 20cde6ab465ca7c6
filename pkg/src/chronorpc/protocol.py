"""Wire protocol for time-triggered remote operations.

Messages travel as newline-delimited JSON: one UTF-8 encoded JSON object per
line, each frame at most 64 KiB including the terminating newline. Timestamps
are integer nanoseconds since the Unix epoch (UTC); durations are signed
integer nanoseconds.

Frame vocabulary::

    {"type": "rpc", "message-id": str, "op": str, "params": {str: str},
     "scheduled-time": int?, "get-time": bool?}

    {"type": "rpc-reply", "message-id": str, "status": "ok" | "error",
     "error-code": str?, "error-detail": str?, "execution-time": int?,
     "params": {str: str}?}

    {"type": "notification", "message-id": str, "accepted": bool}

    {"type": "cancel-schedule", "message-id": str, "target-id": str}

``scheduled-time`` is absent for execute-immediately rpcs. ``get-time``
defaults to false and asks the server to report the operation's completion
time; a reply carries ``execution-time`` only when the rpc asked for it and
the status is "ok". Reply ``params`` is the return channel for operations
that produce values (e.g. get-value). A notification acknowledges admission
of a scheduled rpc before its scheduled time; ``target-id`` names the
message-id a cancel-schedule rpc wants withdrawn.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

__all__ = [
    "MAX_FRAME_BYTES",
    "MICROS",
    "MILLIS",
    "SECONDS",
    "ProtocolError",
    "MalformedFrame",
    "UnknownType",
    "MissingField",
    "TransportClosed",
    "Operation",
    "RpcMessage",
    "RpcReply",
    "ScheduleNotification",
    "CancelSchedule",
    "Message",
    "encode",
    "decode",
    "StreamDecoder",
    "Verdict",
    "SchedulingRangeConfig",
    "validate_schedule",
    "ERR_SCHEDULE_OUT_OF_RANGE",
    "ERR_UNKNOWN_OPERATION",
    "ERR_UNKNOWN_MESSAGE_ID",
    "ERR_DUPLICATE_MESSAGE_ID",
    "ERR_ALREADY_EXECUTED",
    "ERR_UNKNOWN_KEY",
    "ERR_CANCELLED",
    "ERR_INVALID_PARAMS",
]

MAX_FRAME_BYTES = 64 * 1024

# Duration helpers, all in nanoseconds.
MICROS = 1_000
MILLIS = 1_000_000
SECONDS = 1_000_000_000

# Error codes carried in rpc-reply "error-code".
ERR_SCHEDULE_OUT_OF_RANGE = "schedule-out-of-range"
ERR_UNKNOWN_OPERATION = "unknown-operation"
ERR_UNKNOWN_MESSAGE_ID = "unknown-message-id"
ERR_DUPLICATE_MESSAGE_ID = "duplicate-message-id"
ERR_ALREADY_EXECUTED = "already-executed"
ERR_UNKNOWN_KEY = "unknown-key"
ERR_CANCELLED = "cancelled"
ERR_INVALID_PARAMS = "invalid-params"


class ProtocolError(Exception):
    """Base class for frame decode failures."""


class MalformedFrame(ProtocolError):
    """Frame is not one well-formed JSON object line, or a field has the wrong shape."""

    def __init__(self, reason: str, field_name: str | None = None):
        super().__init__(reason if field_name is None else f"{reason}: {field_name!r}")
        self.field_name = field_name


class UnknownType(ProtocolError):
    """The "type" field holds an unrecognized value."""

    def __init__(self, type_value: object):
        super().__init__(f"unknown message type: {type_value!r}")
        self.type_value = type_value


class MissingField(ProtocolError):
    """A required field is absent; names the offending field."""

    def __init__(self, field_name: str):
        super().__init__(f"missing field: {field_name!r}")
        self.field_name = field_name


class TransportClosed(Exception):
    """Send or receive attempted on a closed transport."""


@dataclass(frozen=True)
class Operation:
    """An operation name plus string-valued parameters."""

    name: str
    params: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class RpcMessage:
    message_id: str
    operation: Operation
    scheduled_time: int | None = None
    get_time: bool = False


@dataclass(frozen=True)
class RpcReply:
    message_id: str
    status: str  # "ok" | "error"
    error_code: str | None = None
    error_detail: str = ""
    execution_time: int | None = None
    params: dict[str, str] | None = None

    @classmethod
    def make_ok(
        cls,
        message_id: str,
        execution_time: int | None = None,
        params: dict[str, str] | None = None,
    ) -> "RpcReply":
        return cls(message_id, "ok", execution_time=execution_time, params=params)

    @classmethod
    def make_error(cls, message_id: str, code: str, detail: str = "") -> "RpcReply":
        return cls(message_id, "error", error_code=code, error_detail=detail)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class ScheduleNotification:
    message_id: str
    accepted: bool


@dataclass(frozen=True)
class CancelSchedule:
    message_id: str
    target_id: str


Message = RpcMessage | RpcReply | ScheduleNotification | CancelSchedule


def _check_str(value: object, name: str) -> str:
    if not isinstance(value, str) or not value:
        raise ValueError(f"{name} must be a non-empty string, got {value!r}")
    return value


def _check_params(params: dict[str, str], name: str) -> dict[str, str]:
    for k, v in params.items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise ValueError(f"{name} entries must be str -> str, got {k!r}: {v!r}")
    return params


def encode(msg: Message) -> bytes:
    """Serialize one message to a newline-terminated frame.

    Raises ValueError for structurally invalid messages (empty id, non-string
    params, an error reply carrying execution-time, or a frame over 64 KiB).
    """
    obj: dict[str, object] = {}
    if isinstance(msg, RpcMessage):
        obj["type"] = "rpc"
        obj["message-id"] = _check_str(msg.message_id, "message-id")
        obj["op"] = _check_str(msg.operation.name, "op")
        obj["params"] = _check_params(msg.operation.params, "params")
        if msg.scheduled_time is not None:
            obj["scheduled-time"] = int(msg.scheduled_time)
        if msg.get_time:
            obj["get-time"] = True
    elif isinstance(msg, RpcReply):
        if msg.status not in ("ok", "error"):
            raise ValueError(f"bad reply status: {msg.status!r}")
        if msg.status == "error" and not msg.error_code:
            raise ValueError("error reply needs an error-code")
        if msg.status == "ok" and msg.error_code is not None:
            raise ValueError("ok reply cannot carry an error-code")
        if msg.status == "error" and msg.execution_time is not None:
            raise ValueError("error reply cannot carry execution-time")
        obj["type"] = "rpc-reply"
        obj["message-id"] = _check_str(msg.message_id, "message-id")
        obj["status"] = msg.status
        if msg.error_code is not None:
            obj["error-code"] = msg.error_code
        if msg.error_detail:
            obj["error-detail"] = msg.error_detail
        if msg.execution_time is not None:
            obj["execution-time"] = int(msg.execution_time)
        if msg.params is not None:
            obj["params"] = _check_params(msg.params, "params")
    elif isinstance(msg, ScheduleNotification):
        obj["type"] = "notification"
        obj["message-id"] = _check_str(msg.message_id, "message-id")
        obj["accepted"] = bool(msg.accepted)
    elif isinstance(msg, CancelSchedule):
        obj["type"] = "cancel-schedule"
        obj["message-id"] = _check_str(msg.message_id, "message-id")
        obj["target-id"] = _check_str(msg.target_id, "target-id")
    else:
        raise ValueError(f"not a protocol message: {msg!r}")

    frame = json.dumps(obj, separators=(",", ":")).encode("utf-8") + b"\n"
    if len(frame) > MAX_FRAME_BYTES:
        raise ValueError(f"frame exceeds {MAX_FRAME_BYTES} bytes")
    return frame


def _get_required(obj: dict, key: str) -> object:
    if key not in obj:
        raise MissingField(key)
    return obj[key]


def _field_str(obj: dict, key: str) -> str:
    value = _get_required(obj, key)
    if not isinstance(value, str) or not value:
        raise MalformedFrame("field must be a non-empty string", key)
    return value


def _field_int_opt(obj: dict, key: str) -> int | None:
    value = obj.get(key)
    if value is None:
        return None
    # bool is an int subclass; reject it explicitly.
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedFrame("field must be an integer", key)
    return value


def _field_bool(obj: dict, key: str, default: bool | None = None) -> bool:
    if key not in obj:
        if default is None:
            raise MissingField(key)
        return default
    value = obj[key]
    if not isinstance(value, bool):
        raise MalformedFrame("field must be a boolean", key)
    return value


def _field_params(obj: dict, key: str) -> dict[str, str]:
    value = obj.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise MalformedFrame("field must be an object", key)
    for k, v in value.items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise MalformedFrame("field entries must map strings to strings", key)
    return value


def decode(data: bytes | bytearray | str) -> Message:
    """Parse one complete newline-terminated frame into a message.

    Raises MalformedFrame for framing/syntax/shape problems, UnknownType for
    an unrecognized "type", MissingField when a required field is absent.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    data = bytes(data)
    if len(data) > MAX_FRAME_BYTES:
        raise MalformedFrame(f"frame exceeds {MAX_FRAME_BYTES} bytes")
    if not data.endswith(b"\n"):
        raise MalformedFrame("frame is not newline-terminated")
    line = data[:-1]
    if b"\n" in line:
        raise MalformedFrame("more than one frame supplied")
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrame(f"bad frame syntax ({exc})") from exc
    if not isinstance(obj, dict):
        raise MalformedFrame("frame is not a JSON object")

    type_value = _get_required(obj, "type")
    if type_value == "rpc":
        return RpcMessage(
            message_id=_field_str(obj, "message-id"),
            operation=Operation(_field_str(obj, "op"), _field_params(obj, "params")),
            scheduled_time=_field_int_opt(obj, "scheduled-time"),
            get_time=_field_bool(obj, "get-time", default=False),
        )
    if type_value == "rpc-reply":
        message_id = _field_str(obj, "message-id")
        status = _field_str(obj, "status")
        if status not in ("ok", "error"):
            raise MalformedFrame("status must be 'ok' or 'error'", "status")
        error_code: str | None = None
        error_detail = ""
        if status == "error":
            error_code = _field_str(obj, "error-code")
            detail = obj.get("error-detail", "")
            if not isinstance(detail, str):
                raise MalformedFrame("field must be a string", "error-detail")
            error_detail = detail
        execution_time = _field_int_opt(obj, "execution-time")
        if status == "error" and execution_time is not None:
            raise MalformedFrame("error reply cannot carry execution-time", "execution-time")
        params = obj.get("params")
        if params is not None:
            params = _field_params(obj, "params")
        return RpcReply(message_id, status, error_code, error_detail, execution_time, params)
    if type_value == "notification":
        return ScheduleNotification(
            message_id=_field_str(obj, "message-id"),
            accepted=_field_bool(obj, "accepted"),
        )
    if type_value == "cancel-schedule":
        return CancelSchedule(
            message_id=_field_str(obj, "message-id"),
            target_id=_field_str(obj, "target-id"),
        )
    raise UnknownType(type_value)


class StreamDecoder:
    """Incremental decoder for a byte stream of newline-delimited frames.

    feed() returns the messages completed by the supplied chunk, in order.
    Raises MalformedFrame as soon as the unterminated tail exceeds the frame
    size limit.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out: list[Message] = []
        while True:
            idx = self._buf.find(b"\n")
            if idx < 0:
                break
            frame = bytes(self._buf[: idx + 1])
            del self._buf[: idx + 1]
            out.append(decode(frame))
        if len(self._buf) >= MAX_FRAME_BYTES:
            raise MalformedFrame(f"unterminated frame exceeds {MAX_FRAME_BYTES} bytes")
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


class Verdict(enum.Enum):
    """Admission decision for a scheduled time against the acceptable range."""

    ACCEPT = "accept"
    ACCEPT_RUN_NOW = "accept-run-now"
    REJECT = "reject"


@dataclass(frozen=True)
class SchedulingRangeConfig:
    """Acceptable scheduling range around the server's current time.

    A scheduled time up to sched_max_future ahead is queued; one up to
    sched_max_past behind is run immediately; anything else is rejected.
    """

    sched_max_future: int = 15 * SECONDS
    sched_max_past: int = 3 * SECONDS

    def __post_init__(self):
        if self.sched_max_future <= 0:
            raise ValueError("sched_max_future must be positive")
        if self.sched_max_past < 0:
            raise ValueError("sched_max_past must be non-negative")


def validate_schedule(
    scheduled_time: int, now: int, config: SchedulingRangeConfig
) -> Verdict:
    """Classify a scheduled time relative to now.

    The verdict depends only on the offset scheduled_time - now:
    [0, sched_max_future] accepts, [-sched_max_past, 0) accepts but runs
    immediately, everything else rejects.
    """
    offset = scheduled_time - now
    if 0 <= offset <= config.sched_max_future:
        return Verdict.ACCEPT
    if -config.sched_max_past <= offset < 0:
        return Verdict.ACCEPT_RUN_NOW
    return Verdict.REJECT
