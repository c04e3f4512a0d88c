"""
Completion providers: an HTTP adapter for OpenAI-compatible chat endpoints
and two deterministic mocks, sharing one caching and retry front end.

Every completion a match consumes becomes a ``CompletionRecord`` in that
match's ``RunLog``. Responses are cached write-once in a Django cache
(``ARENA_CACHE_ALIAS``, a file-based cache by default) keyed by
``cache_key``.
"""
import dataclasses
import functools
import hashlib
import itertools
import json
import logging
import threading
import time
from dataclasses import dataclass
from typing import Optional

import requests
from django.core.cache import caches
from django.core.cache.backends.filebased import FileBasedCache
from django.utils import timezone
from singletonify import singleton

from arena.conf import settings

logger = logging.getLogger("arena")

EPOCH = "1970-01-01T00:00:00+00:00"


class ProviderException(Exception):
    pass


class ProviderTransportException(ProviderException):
    pass


class ProviderConfigurationException(ProviderException):
    pass


class ProviderOfflineException(ProviderConfigurationException):
    pass


class UnknownProviderException(ProviderException):
    pass


class RetryableResponseException(ProviderException):
    pass


@dataclass(frozen=True)
class ProviderParams:
    model: str = ""
    temperature: float = 0.0
    max_completion_tokens: int = 1
    seed: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ProviderConfigurationException("temperature must be >= 0")
        if int(self.max_completion_tokens) < 1:
            raise ProviderConfigurationException("max_completion_tokens must be a positive integer")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, document: dict) -> "ProviderParams":
        return cls(
            model=document.get("model", ""),
            temperature=float(document.get("temperature", 0.0)),
            max_completion_tokens=int(document.get("max_completion_tokens", 1)),
            seed=document.get("seed"),
        )


@dataclass(frozen=True)
class CompletionRecord:
    prompt_hash: str
    prompt: str
    completion: str
    provider: str
    params: dict
    timestamp: str
    latency_ms: float
    retries: int
    attempt: int = 0

    @property
    def ref(self) -> str:
        """Identifies this record in its run log; re-asked prompts differ by attempt."""
        return "{}:{}".format(self.prompt_hash, self.attempt)

    def to_dict(self) -> dict:
        return dict(dataclasses.asdict(self), ref=self.ref)


@dataclass(frozen=True)
class PromptContext:
    """What a prompt asks, for providers that answer from game state instead of text.

    ``query`` is "action", "predict" or "observe"; ``target`` is the seat
    whose move is predicted. ``sequence`` counts the completions the asking
    agent has already requested in this match, retries included.
    """
    seat: object
    game: object
    history: object
    query: str
    variant: object
    target: object = None
    sequence: int = 0


def cache_key(provider_id: str, model: str, params: ProviderParams, prompt: str, scope=None) -> str:
    document = {"provider": provider_id, "model": model, "params": params.to_dict(), "prompt": prompt}
    if scope is not None:
        document["scope"] = scope
    document = json.dumps(document, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(document.encode("utf-8")).hexdigest()


class RateLimiter:
    """Token bucket holding one token, refilled ``rate`` times per second; 0 disables it."""

    def __init__(self, rate: float = 0, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def acquire(self):
        if not self.rate or self.rate <= 0:
            return
        with self._lock:
            now = self._clock()
            wait = max(0.0, self._next_slot - now)
            self._next_slot = max(now, self._next_slot) + 1.0 / self.rate
        if wait:
            self._sleep(wait)


class CompletionCache:

    def __init__(self, backend=None, alias: Optional[str] = None):
        self.backend = backend if backend is not None else caches[alias or settings.ARENA_CACHE_ALIAS]

    @classmethod
    def at(cls, location: str) -> "CompletionCache":
        return cls(FileBasedCache(location, {"TIMEOUT": None, "OPTIONS": {"MAX_ENTRIES": 1000000}}))

    @staticmethod
    def _key(key: str) -> str:
        return "completion:{}".format(key)

    def get(self, key: str) -> Optional[str]:
        return self.backend.get(self._key(key))

    def add(self, key: str, completion: str) -> bool:
        # add() never replaces an existing entry
        return self.backend.add(self._key(key), completion, timeout=None)


class RunLog:
    """Completion records of one match, in the order they were made."""

    def __init__(self):
        self._records = []
        self._lock = threading.Lock()

    def append(self, record: CompletionRecord) -> str:
        with self._lock:
            self._records.append(record)
        return record.ref

    @property
    def records(self) -> list:
        with self._lock:
            return list(self._records)

    def __len__(self):
        return len(self._records)

    def write(self, path: str):
        with open(path, "w", encoding="utf-8") as handle:
            for record in self.records:
                handle.write(json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def if_online(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        if args[0].offline:
            raise ProviderOfflineException("Provider {} needs the network but the run is offline"
                                           .format(args[0].provider_id))
        return func(*args, **kwargs)
    return wrapper


def trap_http_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (requests.ConnectionError, requests.Timeout) as e:
            raise RetryableResponseException("connection failed: {}".format(e)) from e
        except requests.RequestException as e:
            raise ProviderTransportException("request failed: {}".format(e)) from e
    return wrapper


class Provider:
    kind = ""

    def __init__(self, provider_id: str, params: Optional[ProviderParams] = None,
                 cache: Optional[CompletionCache] = None, retries: Optional[int] = None,
                 backoff: Optional[float] = None, backoff_cap: Optional[float] = None,
                 rate_limit: Optional[float] = None, sleep=time.sleep, offline: bool = False):
        self.provider_id = provider_id
        self.params = params or ProviderParams()
        self.cache = cache
        self.retries = settings.ARENA_HTTP_RETRIES if retries is None else retries
        self.backoff = settings.ARENA_HTTP_BACKOFF if backoff is None else backoff
        self.backoff_cap = settings.ARENA_HTTP_BACKOFF_CAP if backoff_cap is None else backoff_cap
        self.limiter = RateLimiter(settings.ARENA_RATE_LIMIT if rate_limit is None else rate_limit, sleep=sleep)
        self.sleep = sleep
        self.offline = offline
        # records of complete() calls made without a run log of their own
        self.run_log = RunLog()

    def clock(self) -> float:
        return time.monotonic()

    def timestamp(self) -> str:
        return timezone.now().isoformat()

    def request(self, prompt: str, params: ProviderParams, context: Optional[PromptContext] = None) -> str:
        raise NotImplementedError

    def cache_scope(self, context: Optional[PromptContext]):
        """Extra cache key material for providers whose answer is not a function of the prompt alone."""
        return None

    def _request_with_retries(self, prompt, params, context) -> tuple:
        for attempt in range(self.retries + 1):
            self.limiter.acquire()
            try:
                return self.request(prompt, params, context), attempt
            except RetryableResponseException as e:
                if attempt == self.retries:
                    raise ProviderTransportException("{} failed after {} retries: {}"
                                                     .format(self.provider_id, self.retries, e)) from e
                delay = min(self.backoff_cap, self.backoff * 2 ** attempt)
                logger.warning("%s: %s, retrying in %.1fs", self.provider_id, e, delay)
                self.sleep(delay)

    def complete_record(self, prompt: str, params: Optional[ProviderParams] = None,
                        context: Optional[PromptContext] = None, use_cache: bool = True,
                        attempt: int = 0) -> CompletionRecord:
        params = params or self.params
        key = cache_key(self.provider_id, params.model, params, prompt, self.cache_scope(context))
        started = self.clock()
        completion = self.cache.get(key) if (self.cache is not None and use_cache) else None
        cached = completion is not None
        retries = 0
        if cached:
            logger.debug("%s: cache hit %s", self.provider_id, key[:12])
        else:
            logger.debug("%s: cache miss %s", self.provider_id, key[:12])
            completion, retries = self._request_with_retries(prompt, params, context)
            if self.cache is not None:
                self.cache.add(key, completion)
        return CompletionRecord(
            prompt_hash=key,
            prompt=prompt,
            completion=completion,
            provider=self.provider_id,
            params=params.to_dict(),
            timestamp=self.timestamp(),
            latency_ms=round((self.clock() - started) * 1000.0, 3),
            retries=retries,
            attempt=attempt,
        )

    def complete(self, prompt: str, params: Optional[ProviderParams] = None, *,
                 context: Optional[PromptContext] = None, run_log: Optional[RunLog] = None,
                 use_cache: bool = True) -> str:
        """The completion text; its record goes to ``run_log``, or to the provider's own log."""
        record = self.complete_record(prompt, params, context, use_cache)
        (run_log if run_log is not None else self.run_log).append(record)
        return record.completion


class OpenAICompatibleProvider(Provider):
    kind = "openai"

    def __init__(self, provider_id: str, params: ProviderParams, endpoint: Optional[str] = None,
                 api_key: Optional[str] = None, timeout: Optional[float] = None, session=None, **kwargs):
        super().__init__(provider_id, params, **kwargs)
        if not params.model:
            raise ProviderConfigurationException("Provider {} has no model".format(provider_id))
        self.endpoint = endpoint or settings.ARENA_ENDPOINT
        self.api_key = api_key if api_key is not None else settings.ARENA_API_KEY
        self.timeout = settings.ARENA_HTTP_TIMEOUT if timeout is None else timeout
        self.session = session or requests.Session()

    def payload(self, prompt: str, params: ProviderParams) -> dict:
        body = {
            "model": params.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_completion_tokens,
        }
        if params.seed is not None:
            body["seed"] = params.seed
        return body

    @if_online
    @trap_http_errors
    def request(self, prompt, params, context=None) -> str:
        if not self.api_key:
            raise ProviderConfigurationException("ARENA_API_KEY is not set")
        response = self.session.post(
            self.endpoint,
            json=self.payload(prompt, params),
            headers={"Authorization": "Bearer {}".format(self.api_key)},
            timeout=self.timeout,
        )
        if response.status_code == 429 or response.status_code >= 500:
            raise RetryableResponseException("HTTP {}".format(response.status_code))
        if response.status_code >= 400:
            raise ProviderConfigurationException("{} rejected the request: HTTP {} {}".format(
                self.provider_id, response.status_code, response.text[:500]))
        try:
            return response.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProviderTransportException("{} sent a malformed completion".format(self.provider_id)) from e


class MockProvider(Provider):
    """Network-free provider; its records carry a fixed clock so runs are reproducible."""

    def __init__(self, provider_id: str, params: Optional[ProviderParams] = None, **kwargs):
        super().__init__(provider_id, params or ProviderParams(model="mock"), **kwargs)
        self.calls = 0
        self._calls_lock = threading.Lock()

    def clock(self) -> float:
        return 0.0

    def timestamp(self) -> str:
        return EPOCH

    def request(self, prompt, params, context=None) -> str:
        with self._calls_lock:
            self.calls += 1
        return self.answer(prompt, context)

    def answer(self, prompt, context) -> str:
        raise NotImplementedError


class ScriptedMockProvider(MockProvider):
    """Returns its tokens in order, cycling.

    Each agent in each match reads the script from the start: the token is
    picked by ``context.sequence``. Calls without a context share one
    provider-wide cycle.
    """
    kind = "mock-scripted"

    def __init__(self, provider_id: str, tokens, **kwargs):
        super().__init__(provider_id, **kwargs)
        if not tokens:
            raise ProviderConfigurationException("Scripted provider {} has no tokens".format(provider_id))
        self.tokens = tuple(str(token) for token in tokens)
        self._script = itertools.cycle(self.tokens)
        self._script_lock = threading.Lock()

    def cache_scope(self, context):
        return None if context is None else context.sequence

    def answer(self, prompt, context) -> str:
        if context is not None:
            return self.tokens[context.sequence % len(self.tokens)]
        with self._script_lock:
            return next(self._script)


class PolicyMockProvider(MockProvider):
    """Answers as a scripted agent would play, reading the game state from the prompt context.

    Predictions come from ``predictor`` when set, otherwise the predicted
    seat is expected to repeat its last action (its preferred option in
    round 1).
    """
    kind = "mock-policy"

    def __init__(self, provider_id: str, policy, predictor=None, **kwargs):
        super().__init__(provider_id, **kwargs)
        self.policy = policy
        self.predictor = predictor

    def answer(self, prompt, context) -> str:
        from arena import agents

        if context is None:
            raise ProviderConfigurationException("Provider {} needs a prompt context".format(self.provider_id))
        if context.query == "action":
            action = agents.scripted_move(self.policy, context.seat, context.game, context.history)
            return context.variant.label(action)
        target = context.target if context.target is not None else context.seat.other
        if self.predictor is not None:
            action = agents.scripted_move(self.predictor, target, context.game, context.history)
        elif len(context.history):
            action = context.history.last_action(target)
        else:
            try:
                action = agents.preferred_option(context.game, target)
            except agents.PreferenceTieException:
                action = 0
        return context.variant.label(action)


def build_provider(provider_id: str, definition: dict, cache: Optional[CompletionCache] = None,
                   offline: bool = False) -> Provider:
    from arena.agents import AgentSpec, AgentSpecException

    kind = definition.get("kind", "openai")
    params = ProviderParams.from_dict(definition)
    common = {
        "cache": cache,
        "offline": offline,
        "retries": definition.get("retries"),
        "rate_limit": definition.get("rate_limit"),
    }
    if kind == OpenAICompatibleProvider.kind:
        return OpenAICompatibleProvider(
            provider_id, params,
            endpoint=definition.get("endpoint"),
            api_key=definition.get("api_key"),
            timeout=definition.get("timeout"),
            **common,
        )
    params = params if params.model else dataclasses.replace(params, model=kind)
    if kind == ScriptedMockProvider.kind:
        return ScriptedMockProvider(provider_id, definition.get("tokens", ()), params=params, **common)
    if kind == PolicyMockProvider.kind:
        try:
            policy = AgentSpec.parse(definition["policy"])
            predictor = AgentSpec.parse(definition["predictor"]) if definition.get("predictor") else None
        except KeyError as e:
            raise ProviderConfigurationException("Provider {} has no policy".format(provider_id)) from e
        except AgentSpecException as e:
            raise ProviderConfigurationException("Provider {}: {}".format(provider_id, e)) from e
        return PolicyMockProvider(provider_id, policy, predictor, params=params, **common)
    raise ProviderConfigurationException("Provider {} has unknown kind '{}'".format(provider_id, kind))


@singleton
class ProviderRegistry:

    def __init__(self):
        """Do nothing"""

    @property
    def _providers(self) -> dict:
        return vars(self).setdefault("providers", {})

    def configure(self, definitions: dict, cache: Optional[CompletionCache] = None, offline: Optional[bool] = None):
        offline = settings.ARENA_OFFLINE if offline is None else offline
        self.reset()
        for provider_id, definition in definitions.items():
            self.register(build_provider(provider_id, definition, cache=cache, offline=offline))
        return self

    def register(self, provider: Provider) -> Provider:
        self._providers[provider.provider_id] = provider
        return provider

    def get(self, provider_id: str) -> Provider:
        try:
            return self._providers[provider_id]
        except KeyError:
            raise UnknownProviderException("Provider '{}' is not configured".format(provider_id))

    def __contains__(self, provider_id) -> bool:
        return provider_id in self._providers

    def ids(self) -> list:
        return sorted(self._providers)

    def reset(self):
        self._providers.clear()
