"""JSON-over-HTTP endpoint tying scans, stored contexts, rules and k-NN together.

``ProximityService`` holds the state and the request logic; ``create_app``
wraps it in a FastAPI application. The rule set and the radio map are
replaced by rebinding a single attribute, so a request sees either the old
or the new version and never a mix.
"""

from __future__ import annotations

import configparser
import json
import logging
import os
from dataclasses import dataclass, field
from datetime import timedelta
from os import PathLike
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .errors import (
    AmbiguousContext,
    CtxQrError,
    EmptyFingerprint,
    EmptyRadioMap,
    InvalidMac,
    InvalidObservation,
    MissingSalt,
    NotAUrl,
    ParseError,
    UnknownContext,
)
from .fingerprint import (
    DEFAULT_FLOOR,
    DEFAULT_K,
    Fingerprint,
    KnnConfig,
    RadioMapEntry,
    fingerprint_from_json,
    knn_locate,
    load_radio_map,
    radio_map_from_json,
    radio_map_to_json,
)
from .qr import (
    AP_PARAM,
    CONTEXT_PARAM,
    PayloadKind,
    classify_payload,
    parse_context_params,
    pseudonymize_mac,
    rewrite_url_stored,
)
from .rules import EvalContext, Rule, evaluate_all, parse_rules
from .store import Clock, ScanStore, event_to_json, parse_ts, utc_now

log = logging.getLogger(__name__)

ENV_LISTEN = "CTXQR_LISTEN"
ENV_SALT = "CTXQR_SALT"
ANONYMOUS_USER = "anonymous"


class BadRequest(CtxQrError, ValueError):
    code = "BadRequest"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    store_path: str | None = None
    rules_path: str | None = None
    radio_map_path: str | None = None
    salt: str | None = field(default=None, repr=False)
    pseudonymize: bool = True
    k: int = DEFAULT_K
    rssi_floor: int = DEFAULT_FLOOR
    context_ttl: timedelta | None = None

    def validate(self) -> None:
        if self.pseudonymize and not self.salt:
            raise MissingSalt("pseudonymization is enabled but no salt is configured")
        KnnConfig(self.k, self.rssi_floor)

    @classmethod
    def load(cls, path: str | PathLike[str] | None = None, environ: dict[str, str] | None = None) -> ServiceConfig:
        """Read an INI-style ``[service]`` section, then apply env overrides.

        Keys: listen (host:port), store, rules, radiomap, salt, pseudonymize,
        k, floor, ttl_seconds. ``CTXQR_LISTEN`` and ``CTXQR_SALT`` override
        the file.
        """
        environ = os.environ if environ is None else environ
        cfg = cls()
        if path is not None:
            parser = configparser.ConfigParser()
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
            sec = parser["service"] if parser.has_section("service") else parser[parser.default_section]
            if "listen" in sec:
                cfg.host, cfg.port = _split_listen(sec["listen"])
            cfg.store_path = sec.get("store", cfg.store_path)
            cfg.rules_path = sec.get("rules", cfg.rules_path)
            cfg.radio_map_path = sec.get("radiomap", cfg.radio_map_path)
            cfg.salt = sec.get("salt", cfg.salt)
            cfg.pseudonymize = sec.getboolean("pseudonymize", cfg.pseudonymize)
            cfg.k = sec.getint("k", cfg.k)
            cfg.rssi_floor = sec.getint("floor", cfg.rssi_floor)
            if "ttl_seconds" in sec:
                cfg.context_ttl = timedelta(seconds=sec.getint("ttl_seconds"))
        if environ.get(ENV_LISTEN):
            cfg.host, cfg.port = _split_listen(environ[ENV_LISTEN])
        if environ.get(ENV_SALT):
            cfg.salt = environ[ENV_SALT]
        return cfg


def _split_listen(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {text!r}")
    return host, int(port)


@dataclass(frozen=True)
class _RuleSet:
    text: str
    rules: tuple[Rule, ...]


def _require_dict(body: Any) -> dict[str, Any]:
    if not isinstance(body, dict):
        raise BadRequest("request body must be a JSON object")
    return body


def _fingerprint_of(body: dict[str, Any]) -> Fingerprint:
    try:
        fp = fingerprint_from_json(body.get("aps"))
    except (InvalidObservation, InvalidMac) as exc:
        raise BadRequest(str(exc)) from None
    if not len(fp):
        raise EmptyFingerprint("scan has no access points")
    return fp


class ProximityService:
    def __init__(
        self,
        config: ServiceConfig | None = None,
        *,
        store: ScanStore | None = None,
        clock: Clock = utc_now,
        rules_text: str | None = None,
        radio_map: list[RadioMapEntry] | None = None,
    ):
        self.config = config or ServiceConfig(pseudonymize=False)
        self.config.validate()
        self.clock = clock
        if store is None:
            store = ScanStore(self.config.store_path, ttl=self.config.context_ttl, clock=clock)
        self.store = store
        self.knn = KnnConfig(self.config.k, self.config.rssi_floor)
        if rules_text is None and self.config.rules_path:
            with open(self.config.rules_path, encoding="utf-8") as fh:
                rules_text = fh.read()
        self._rules = _RuleSet("", ())
        if rules_text is not None:
            self.set_rules(rules_text)
        if radio_map is None and self.config.radio_map_path:
            radio_map = load_radio_map(self.config.radio_map_path)
        self._radio_map: tuple[RadioMapEntry, ...] = tuple(radio_map or ())

    def user_token(self, user: Any) -> str:
        if not isinstance(user, str) or not user:
            raise BadRequest("'user' must be a non-empty string")
        if not self.config.pseudonymize:
            return user
        try:
            return pseudonymize_mac(user, self.config.salt)
        except InvalidMac:
            raise BadRequest(f"'user' must be a device MAC address, got {user!r}") from None

    # scans and contexts
    def ingest_scan(self, body: Any) -> dict[str, str]:
        body = _require_dict(body)
        url = body.get("url")
        if not isinstance(url, str):
            raise BadRequest("'url' must be a string")
        fp = _fingerprint_of(body)
        token = self.user_token(body.get("user"))
        ts = None
        if body.get("ts") is not None:
            try:
                ts = parse_ts(body["ts"])
            except (TypeError, ValueError) as exc:
                raise BadRequest(f"bad 'ts': {exc}") from None
        if classify_payload(url).kind is not PayloadKind.HTTP_URL:
            raise NotAUrl(f"'url' is not an absolute http(s) URL: {url!r}")
        context_id = self.store.store_scan(token, fp, url, ts)
        augmented = rewrite_url_stored(url, context_id)
        return {"context_id": context_id, "augmented_url": augmented}

    def context(self, context_id: str) -> dict[str, Any]:
        return event_to_json(self.store.get_context(context_id))

    def param_names(self, context_id: str) -> list[str]:
        return self.store.get_parameter_names(context_id)

    def param_values(self, context_id: str, name: str) -> list[str]:
        return self.store.get_parameter_values(context_id, name)

    # rules
    @property
    def rules_text(self) -> str:
        return self._rules.text

    @property
    def rules(self) -> tuple[Rule, ...]:
        return self._rules.rules

    def set_rules(self, text: str) -> int:
        parsed = tuple(parse_rules(text)) if text.strip() else ()
        self._rules = _RuleSet(text, parsed)
        return len(parsed)

    def _eval_context(self, body: dict[str, Any]) -> EvalContext:
        now = self.clock()
        has_id = body.get("context_id") is not None
        has_inline = body.get("aps") is not None
        if has_id and has_inline:
            raise AmbiguousContext("supply either context_id or an inline scan, not both")
        if has_id:
            event = self.store.get_context(str(body["context_id"]))
            return EvalContext(event.user_token, now, self.store, event.fingerprint,
                               self.config.rssi_floor, event_id=event.id)
        if has_inline:
            fp = _fingerprint_of(body)
            user = body.get("user")
            token = ANONYMOUS_USER if user is None else self.user_token(user)
            return EvalContext(token, now, self.store, fp, self.config.rssi_floor)
        raise BadRequest("supply context_id or an inline scan ('aps')")

    def evaluate(self, body: Any) -> dict[str, list[str]]:
        ctx = self._eval_context(_require_dict(body))
        return {"actions": evaluate_all(self._rules.rules, ctx)}

    def evaluate_url_params(self, url: str, user: str | None) -> dict[str, list[str]]:
        """GET landing: the query string of a rewritten QR URL."""
        params = parse_context_params(url)
        if params.context_id is not None:
            return self.evaluate({"context_id": params.context_id})
        if params.fingerprint is None:
            raise BadRequest("pseudonymized inline scans cannot be evaluated")
        body: dict[str, Any] = {"aps": [{"bssid": o.bssid, "rssi": o.rssi} for o in params.fingerprint]}
        if user is not None:
            body["user"] = user
        return self.evaluate(body)

    # localization
    @property
    def radio_map(self) -> tuple[RadioMapEntry, ...]:
        return self._radio_map

    def set_radio_map(self, data: Any) -> int:
        entries = tuple(radio_map_from_json(data))
        self._radio_map = entries
        return len(entries)

    def locate(self, body: Any) -> dict[str, Any]:
        body = _require_dict(body)
        if body.get("context_id") is not None and body.get("aps") is not None:
            raise AmbiguousContext("supply either context_id or an inline scan, not both")
        if body.get("context_id") is not None:
            fp = self.store.get_context(str(body["context_id"])).fingerprint
        else:
            fp = _fingerprint_of(body)
        est = knn_locate(fp, self._radio_map, self.knn)
        return {
            "lat": est.latitude,
            "lon": est.longitude,
            "neighbors": [
                {"label": n.entry.label, "lat": n.entry.latitude, "lon": n.entry.longitude,
                 "distance": n.distance}
                for n in est.neighbors
            ],
        }


_STATUS = {
    UnknownContext: 404,
    AmbiguousContext: 409,
    EmptyRadioMap: 422,
    ParseError: 422,
}


def _status_for(exc: CtxQrError) -> int:
    for cls, status in _STATUS.items():
        if isinstance(exc, cls):
            return status
    return 400


def _error_body(exc: CtxQrError) -> dict[str, Any]:
    body: dict[str, Any] = {"error": exc.code, "detail": str(exc)}
    if isinstance(exc, ParseError):
        body["line"] = exc.line
        body["column"] = exc.column
        body["expected"] = sorted(exc.expected)
    return body


async def _json_body(request: Request) -> Any:
    raw = await request.body()
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadRequest(f"body is not valid JSON: {exc}") from None


def create_app(service: ProximityService | None = None, **kwargs: Any) -> FastAPI:
    """Build the FastAPI app; ``kwargs`` go to ``ProximityService`` when none is given."""
    svc = service or ProximityService(**kwargs)
    app = FastAPI(title="ctxqr proximity service")
    app.state.service = svc

    @app.exception_handler(CtxQrError)
    async def _domain_error(request: Request, exc: CtxQrError) -> JSONResponse:
        return JSONResponse(_error_body(exc), status_code=_status_for(exc))

    @app.post("/api/scans", status_code=201)
    async def post_scan(request: Request) -> dict[str, str]:
        return svc.ingest_scan(await _json_body(request))

    @app.get("/api/contexts/{context_id}")
    def get_context(context_id: str) -> dict[str, Any]:
        return svc.context(context_id)

    @app.get("/api/contexts/{context_id}/params")
    def get_param_names(context_id: str) -> list[str]:
        return svc.param_names(context_id)

    @app.get("/api/contexts/{context_id}/params/{name}")
    def get_param_values(context_id: str, name: str) -> list[str]:
        return svc.param_values(context_id, name)

    @app.post("/api/evaluate")
    async def post_evaluate(request: Request) -> dict[str, list[str]]:
        return svc.evaluate(await _json_body(request))

    @app.get("/api/evaluate")
    def get_evaluate(request: Request) -> dict[str, list[str]]:
        qs = request.url.query
        if AP_PARAM not in request.query_params and CONTEXT_PARAM not in request.query_params:
            raise BadRequest("landing URL carries neither context_id nor ap parameters")
        return svc.evaluate_url_params(f"http://landing/?{qs}", request.query_params.get("user"))

    @app.post("/api/locate")
    async def post_locate(request: Request) -> dict[str, Any]:
        return svc.locate(await _json_body(request))

    @app.put("/api/rules")
    async def put_rules(request: Request) -> dict[str, int]:
        raw = await request.body()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise BadRequest("rules must be UTF-8 text") from None
        return {"rule_count": svc.set_rules(text)}

    @app.get("/api/rules", response_class=PlainTextResponse)
    def get_rules() -> str:
        return svc.rules_text

    @app.put("/api/radiomap")
    async def put_radio_map(request: Request) -> dict[str, int]:
        return {"entry_count": svc.set_radio_map(await _json_body(request))}

    @app.get("/api/radiomap")
    def get_radio_map() -> list[dict[str, Any]]:
        return radio_map_to_json(svc.radio_map)

    return app


def serve(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(ProximityService(config))
    log.info("listening on %s:%d", config.host, config.port)
    uvicorn.run(app, host=config.host, port=config.port)
