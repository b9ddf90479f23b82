"""Persona-conditioned survey prompts, chat-completion backends, and the
driver that collects one parsed choice per (respondent, task).

Each request is stateless: the persona, briefing, and attribute explanations
are re-sent with every choice task, which keeps runs reproducible and makes
retries safe.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import requests

from .choices import Choice, ChoiceDataset, NONE_CHOICE, RespondentProfile
from .studies import Attribute, ChoiceTask, StudyDesign

logger = logging.getLogger(__name__)

INSTRUCTION = ("Which option do you choose? You have to pick one option. "
               "Don't explain your choice, just name the option you choose.")
CLARIFICATION = ("Answer with only the option you choose, for example "
                 "'Option 2'.")

_OPTION_RE = re.compile(r"option\s*#?\s*(\d+)", re.IGNORECASE)
_BARE_REPLY_RE = re.compile(r"[\d\s.,;:!?#()\[\]'\"*_-]*")
_RENDERED_OPTION_RE = re.compile(r"(?m)^Option (\d+) is")


class SurveyError(RuntimeError):
    """Raised for misconfigured surveys (missing profiles, bad templates)."""


class BackendError(RuntimeError):
    """Transport-level failure talking to a chat backend."""


class RateLimitError(BackendError):
    """The backend asked us to slow down (HTTP 429)."""


class AuthenticationError(BackendError):
    """Credentials rejected; retrying cannot help."""


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str
    model: str
    temperature: float = 1.0
    api_key_env: str = "CHAT_API_KEY"
    max_retries: int = 3
    timeout: float = 30.0

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise SurveyError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_retries < 0:
            raise SurveyError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise SurveyError("timeout must be > 0")


@dataclass(frozen=True)
class SurveyResponse:
    respondent_id: str
    task_id: int
    raw_text: str
    parsed_choice: int | None  # 1..alts_per_task+1, None when unparseable


@dataclass(frozen=True)
class PromptTemplate:
    """All fixed and templated text needed to render one choice task.

    persona_preamble and option_line are format strings; the demographic
    slots fill from RespondentProfile fields and the option slots from the
    task's attribute levels ({k} is the option number, {social_pct} the
    social signal as an integer percentage).
    """

    persona_preamble: str
    study_briefing: str
    attribute_explanations: str
    task_intro: str
    option_line: str
    none_option_line: str
    attributes: tuple[Attribute, ...]
    instruction: str = INSTRUCTION

    @property
    def required_profile_fields(self) -> tuple[str, ...]:
        return tuple(re.findall(r"\{(\w+)\}", self.persona_preamble))


# ---------------------------------------------------------------------------
# Study-specific templates
# ---------------------------------------------------------------------------

_PS_PERSONA = (
    "You are a {age_bracket} years old {gender}, your highest level of school "
    "you have completed or the highest degree you have received is "
    "{education_level}, your major subject of study was {education_subject}, "
    "your total yearly household income before taxes is approximately "
    "{income_bracket} you describe your political orientation as "
    "{political_orientation}."
)

_PS_PERSONA_WITH_CONNECTIONS = _PS_PERSONA[:-1] + (
    ", and you have {social_media_connections} connections on social media."
)

_PS_BRIEFING = """\
Carbon capture and storage (CCS) is a set of technologies aimed at capturing, \
transporting, and storing carbon dioxide (CO2) emitted from industrial \
facilities and power plants that use fossil fuels like coal and natural gas. \
CO2 emissions are one of the major contributors to climate change. The goal \
of CCS is to prevent CO2 from reaching the atmosphere by injecting it in \
suitable underground geological formations - depleted oil and gas fields and \
deep saline formations - for permanent storage.

Some scientific studies promote CCS as a prospective solution to climate \
change, as it could significantly contribute to the reduction of CO2 \
emissions, while other studies emphasize that CCS is a very costly technology \
and there is a need to investigate its potential risks in order to ensure \
that its deployment would not have an adverse impact on people and the \
environment. Political discussions currently focus on how to regulate and \
implement the use of CCS.

You may or may not agree with scaling up CCS, but if a scale-up were to be \
implemented in your state, you may still have different preferences as to \
specific scenarios. In the following, we will sketch out some scenarios for a \
scale-up of CCS. Please take a look at these scenarios and evaluate them."""

_PS_ATTRIBUTES = """\
The below-mentioned policy scenarios each consist of 6 aspects:
1. Policy type: Which policies should be implemented to promote CCS? a) A ban \
on the construction of new fossil fuel power plants without CCS in your \
state: According to this policy, no new coal- or gas-fired power stations can \
be built in your state without including CCS. b) Government subsidies for CCS \
in your state: Your state government could subsidize CCS projects. This would \
make deployment of the technology more economically attractive. c) Increase \
in taxes on fossil fuel power generation without CCS in your state: Such a \
policy would make fossil fuel power generation with no CCS more expensive.
2. Policy cost: All policies to scale up CCS would produce some costs for \
American consumers. However, the exact amount depends on many factors, such \
as the concrete policy calibration, economic conditions, etc. Estimates for a \
scale-up policy currently range between costs of US$ 4 and 19 per household \
(per month).
3. Beginning of policy implementation: When should the policy be implemented? \
Various scenarios include implementation in 2025, 2035, 2045 or 2055.
4. Distance from residential areas: CCS facilities are currently planned in \
many American states. Some people fear that they could negatively affect \
buildings and the safety of communities. Different rules regarding the \
required distance of CCS facilities from residential areas are currently \
being discussed: 2 miles / 5 miles / 10 miles / 50 miles.
5. Policy endorsement: Various stakeholders (e.g., Greenpeace or the \
U.S.-based Carbon Capture Coalition (ccc)) and political parties \
(Democrats(dp), Republicans(rp)) have their own opinions on policy proposals \
to scale up CCS.
6. Percentage of your friends who endorse the policy scenario: Think about \
your friends and imagine you could know if they endorse a policy scenario. \
This attribute represents the percentage of your friends, out of your total \
number of friends, who endorse it."""

_PS_TASK_INTRO = (
    "You will repeatedly see three different policy scenarios and I will ask "
    "you which one you would prefer. If you think you wouldn't prefer any, "
    "feel free to choose the None option."
)

_PS_OPTION_LINE = (
    "Option {k} is a {policy_type} policy, costs {cost} per household per "
    "month, will be implemented in {start_year}, the required distance to "
    "residential areas is {distance}, is endorsed by {endorsement}, and "
    "{social_pct}% of your friends endorse it."
)

_PS_NONE_LINE = "Option {k} is to choose no policy."

_AA_PERSONA = (
    "You are a {age_bracket} years old {gender}, your highest level of school "
    "you have completed or the highest degree you have received is "
    "{education_level} and your total household income during the past 12 "
    "months was {income_bracket}."
)

_AA_BRIEFING = """\
Imagine there are several new multiple instant messaging apps on the market. \
All apps are free and are similar to each other in all but the aspects \
described below. Furthermore, we ask you to imagine several of your friends \
are already using such an app. We will show you this information as one of \
the app attributes."""

_AA_ATTRIBUTES = """\
The apps differ in terms of the following attributes:
1. Accessibility: Instant messaging apps differ in the way you can access \
them. They can be:
- Mobile only: A mobile only app is specifically developed for smartphones \
and tablets. It takes full advantage of mobile device features such as push \
notifications, camera integration, and location services. It offers a \
seamless, on-the-go communication experience, but it's not accessible on \
desktop or web browsers.
- Web accessible: Web-accessible instant messaging apps expand their reach \
beyond mobile devices. They allow users to access their chats and \
conversations via web browsers on desktop computers or laptops. This \
versatility enables seamless transition between devices, convenient typing \
with a physical keyboard, and the ability to share files and links more \
easily on a larger screen.
2. Authentication: Authentication is important to safeguard your personal \
information and ensure that your conversations remain private. The apps can \
use one of the three levels of authentication described below, sorted by the \
least to the most secure:
- Simple authentication: Login with username and password.
- Two-factor authentication: Two-factor authentication (2FA) requires an \
additional authentication method beyond your username and password. This \
involves receiving a one-time verification code via SMS or email, which you \
must enter alongside your password to access your account.
- Multi-factor authentication: In addition to your username, password, and \
the SMS or email verification code, you must also verify your identity using \
a fingerprint scanner or a hardware token (a device connected to your mobile \
or computer.)
3. Customisation level: The customization level determines how much you can \
personalize your messaging experience. It can take one of the following \
values:
- Low: You can adjust the basic settings, like security and notification \
preferences.
- Medium: In addition to the basic settings, you have the flexibility to \
shape your chat organization, such as creating chat lists and pinning \
important conversations to the top.
- High: Additionally, you have the option to customize themes and \
appearance, including elements like color schemes, backgrounds, fonts used \
and many others.
4. Video calls: To make the most of your video communication experience, \
apps focus either on One-on-one or multi-person video calls.
- One-on-One: The app provides a straightforward and personal video calling \
experience designed and optimised for one-on-one interactions. The app does \
not support video calls between more than two people at once.
- Multi-person: The app offers a versatile video calling feature, allowing \
you to connect with multiple participants simultaneously."""

_AA_TASK_INTRO = (
    "I will repeatedly show you three apps which differ in terms of the "
    "attributes previously described and ask you to select which one (out of "
    "the three) you would use instead of the app you are currently using. If "
    "you don't like any of the options, please feel free to select the None "
    "option."
)

_AA_OPTION_LINE = (
    "Option {k} is {accessibility}, has {authentication} authentication, a "
    "{customisation} customisation level, and allows {video_calls} calls and "
    "{social_pct}% of your friends are already using the app."
)

_AA_NONE_LINE = "Option {k} is to use no app."


def ps_prompt_template(attributes: Sequence[Attribute],
                       include_social_media: bool = False) -> PromptTemplate:
    """Prompt template for the policy-support study. The social media
    connections slot is off by default."""
    persona = _PS_PERSONA_WITH_CONNECTIONS if include_social_media else _PS_PERSONA
    return PromptTemplate(
        persona_preamble=persona,
        study_briefing=_PS_BRIEFING,
        attribute_explanations=_PS_ATTRIBUTES,
        task_intro=_PS_TASK_INTRO,
        option_line=_PS_OPTION_LINE,
        none_option_line=_PS_NONE_LINE,
        attributes=tuple(attributes),
    )


def aa_prompt_template(attributes: Sequence[Attribute]) -> PromptTemplate:
    """Prompt template for the app-adoption study."""
    return PromptTemplate(
        persona_preamble=_AA_PERSONA,
        study_briefing=_AA_BRIEFING,
        attribute_explanations=_AA_ATTRIBUTES,
        task_intro=_AA_TASK_INTRO,
        option_line=_AA_OPTION_LINE,
        none_option_line=_AA_NONE_LINE,
        attributes=tuple(attributes),
    )


# ---------------------------------------------------------------------------
# Rendering and parsing
# ---------------------------------------------------------------------------

def render_prompt(template: PromptTemplate, profile: RespondentProfile,
                  task: ChoiceTask) -> str:
    """Render one choice task: persona, briefing, attribute explanations, the
    numbered options (social signal as an integer percentage), and the fixed
    instruction. Byte-deterministic."""
    slots = {f: getattr(profile, f, "") for f in template.required_profile_fields}
    missing = [f for f, v in slots.items() if not str(v).strip()]
    if missing:
        raise SurveyError(
            f"profile {profile.respondent_id!r} missing demographic slots: "
            f"{', '.join(missing)}")
    persona = template.persona_preamble.format(**slots)

    non_social = [a for a in template.attributes if not a.is_social_signal]
    lines = []
    for k, alt in enumerate(task.alternatives, start=1):
        values = {a.name: str(a.levels[alt.levels[i]])
                  for i, a in enumerate(non_social)}
        if alt.social_value is None:
            raise SurveyError(f"task {task.task_id} alternative {k} has no "
                              "social-signal value")
        values["social_pct"] = str(int(round(alt.social_value * 100)))
        lines.append(template.option_line.format(k=k, **values))
    lines.append(template.none_option_line.format(k=len(task.alternatives) + 1))

    return "\n\n".join([
        persona,
        template.study_briefing,
        template.attribute_explanations,
        template.task_intro,
        "\n".join(lines),
        template.instruction,
    ])


def count_rendered_options(text: str) -> int:
    """Number of 'Option k is ...' lines in a rendered prompt."""
    return len(_RENDERED_OPTION_RE.findall(text))


def parse_choice(raw_text: str, n_options: int) -> int | None:
    """Extract the chosen option number from a reply.

    First occurrence of 'option <k>' (case-insensitive) with k in range wins;
    a reply that is only digits and punctuation may name the option by a bare
    number. Returns None when unparseable.
    """
    if n_options < 2:
        raise SurveyError("n_options must be >= 2")
    for m in _OPTION_RE.finditer(raw_text):
        k = int(m.group(1))
        if 1 <= k <= n_options:
            return k
    if _BARE_REPLY_RE.fullmatch(raw_text.strip()):
        digits = re.findall(r"\d+", raw_text)
        if len(digits) == 1:
            k = int(digits[0])
            if 1 <= k <= n_options:
                return k
    return None


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class MockBackend:
    """Deterministic offline backend: replies from a script (cycled) or from
    a callable prompt -> str. Script entries may be exceptions to raise."""

    def __init__(self, script: Sequence | Callable[[str], str]):
        self._fn = script if callable(script) else None
        self._script = None if callable(script) else list(script)
        self._i = 0
        self._lock = threading.Lock()
        self.calls = 0

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.calls += 1
            if self._fn is not None:
                return self._fn(prompt)
            item = self._script[self._i % len(self._script)]
            self._i += 1
        if isinstance(item, BaseException):
            raise item
        if isinstance(item, type) and issubclass(item, BaseException):
            raise item("scripted failure")
        return str(item)


class HttpChatBackend:
    """Minimal JSON chat-completion client with vendor adapters.

    flavor 'openai': bearer-token header, messages array request shape.
    flavor 'gemini': key in query string, contents/parts request shape.
    """

    def __init__(self, config: BackendConfig, flavor: str = "openai",
                 session: requests.Session | None = None):
        if flavor not in ("openai", "gemini"):
            raise SurveyError(f"unknown backend flavor {flavor!r}")
        self.config = config
        self.flavor = flavor
        self.session = session or requests.Session()

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise AuthenticationError(
                f"environment variable {self.config.api_key_env} is not set")
        return key

    def complete(self, prompt: str) -> str:
        cfg = self.config
        if self.flavor == "openai":
            url = cfg.endpoint
            headers = {"Authorization": f"Bearer {self._api_key()}"}
            payload = {
                "model": cfg.model,
                "temperature": cfg.temperature,
                "messages": [{"role": "user", "content": prompt}],
            }
        else:
            url = f"{cfg.endpoint}?key={self._api_key()}"
            headers = {}
            payload = {
                "generationConfig": {"temperature": cfg.temperature},
                "contents": [{"parts": [{"text": prompt}]}],
            }
        try:
            resp = self.session.post(url, json=payload, headers=headers,
                                     timeout=cfg.timeout)
        except requests.RequestException as exc:
            raise BackendError(f"request failed: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"HTTP {resp.status_code}")
        if resp.status_code == 429:
            raise RateLimitError("HTTP 429")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        try:
            if self.flavor == "openai":
                return body["choices"][0]["message"]["content"]
            return body["candidates"][0]["content"]["parts"][0]["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed response body: {body!r:.200}") from exc


class RateLimiter:
    """Thread-shared token bucket; acquire() blocks until a token is free."""

    def __init__(self, per_second: float, burst: int = 1):
        if per_second <= 0:
            raise SurveyError("rate must be positive")
        self.per_second = per_second
        self.capacity = float(burst)
        self._tokens = float(burst)
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity,
                                   self._tokens + (now - self._stamp) * self.per_second)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.per_second
            time.sleep(wait)


# ---------------------------------------------------------------------------
# Survey driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurveyFailure:
    respondent_id: str
    task_id: int
    reason: str
    attempts: int


class _TranscriptWriter:
    def __init__(self, path: str | None):
        self._fh = open(path, "w", encoding="utf-8") if path else None
        self._lock = threading.Lock()

    def write(self, record: dict) -> None:
        if self._fh is None:
            return
        line = json.dumps(record, ensure_ascii=False)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def administer_survey(
    backend,
    template: PromptTemplate,
    profiles: Mapping[str, RespondentProfile],
    design: StudyDesign,
    *,
    max_retries: int | None = None,
    backoff: float = 0.5,
    concurrency: int = 1,
    transcript_path: str | None = None,
    rate_limit_per_s: float | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[ChoiceDataset, list[SurveyFailure]]:
    """Collect one parsed choice per (respondent, task) from a chat backend.

    Unparseable replies are retried with an appended clarification line and
    transport errors with exponential backoff, both up to max_retries extra
    attempts; cells still unresolved are recorded as missing in the returned
    failure log. Authentication failures abort the run. Respondents are
    processed concurrently up to the given cap; transcripts (JSON lines, one
    per request) are appended in order within each respondent.
    """
    missing_profiles = [rid for rid in design.tasks if rid not in profiles]
    if missing_profiles:
        raise SurveyError(f"no profile for respondents {missing_profiles[:5]}")
    if max_retries is None:
        cfg = getattr(backend, "config", None)
        max_retries = cfg.max_retries if cfg is not None else 2

    limiter = RateLimiter(rate_limit_per_s) if rate_limit_per_s else None
    transcript = _TranscriptWriter(transcript_path)
    n_options = design.study.alts_per_task + 1
    k = design.study.alts_per_task

    def run_respondent(rid: str) -> tuple[list[Choice], list[SurveyFailure]]:
        got: list[Choice] = []
        failed: list[SurveyFailure] = []
        for task in design.tasks[rid]:
            base_prompt = render_prompt(template, profiles[rid], task)
            prompt = base_prompt
            parsed = None
            reason = "exhausted retries"
            attempt = 0
            while attempt <= max_retries:
                attempt += 1
                if limiter is not None:
                    limiter.acquire()
                record = {"respondent_id": rid, "task_id": task.task_id,
                          "attempt": attempt, "prompt": prompt}
                try:
                    raw = backend.complete(prompt)
                except AuthenticationError:
                    transcript.write({**record, "error": "authentication"})
                    raise
                except BackendError as exc:
                    transcript.write({**record, "error": str(exc)})
                    reason = str(exc)
                    if attempt <= max_retries:
                        sleep(backoff * 2 ** (attempt - 1))
                    continue
                parsed = parse_choice(raw, n_options)
                transcript.write({**record, "response": raw, "parsed": parsed})
                if parsed is not None:
                    break
                reason = f"unparseable reply: {raw[:80]!r}"
                prompt = base_prompt + "\n\n" + CLARIFICATION
            if parsed is None:
                failed.append(SurveyFailure(rid, task.task_id, reason, attempt))
                logger.warning("missing cell (%s, %s): %s", rid, task.task_id, reason)
            else:
                chosen = parsed if parsed <= k else NONE_CHOICE
                got.append(Choice(rid, task.task_id, chosen))
        return got, failed

    rids = list(design.tasks.keys())
    try:
        if concurrency > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=concurrency) as pool:
                outcomes = dict(zip(rids, pool.map(run_respondent, rids)))
        else:
            outcomes = {rid: run_respondent(rid) for rid in rids}
    finally:
        transcript.close()

    choices: list[Choice] = []
    failures: list[SurveyFailure] = []
    for rid in rids:  # design order, independent of scheduling
        got, failed = outcomes[rid]
        choices.extend(got)
        failures.extend(failed)
    dataset = ChoiceDataset(design.study.study_id, design, choices,
                            {rid: profiles[rid] for rid in rids})
    return dataset, failures
