"""Synthetic email-corpus generation pipeline.

Four LLM stages: companies for a country, employees per company, email
scenarios per employee (split between legitimate and phishing), and one
full email per scenario. Every LLM payload is validated against a fixed
schema; payloads that fail get one re-ask ("respond with valid structured
data only"), then are discarded and counted per stage. The only inputs
are (country, X, Y, N): no personal data enters the pipeline.

Prompt templates live in ``phishbench/prompts``; placeholders use
``{name}`` syntax and the report records a hash of every template used.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .corpus import EmailRecord, clean_text, write_canonical
from .errors import GenerationError, TransportError
from .llm import Gateway

COMPANY_FIELDS = (
    "company_name", "establishment_year", "offered_products_services",
    "company_details", "headquarters_location", "number_of_employees",
    "annual_revenue", "main_consumer", "affairs_extent",
)
EMPLOYEE_FIELDS = (
    "name", "gender", "age", "birthplace", "qualifications", "languages",
    "job_title", "current_project", "time_employed", "tech_proficiency",
    "hobbies", "social_media",
)
LEGITIMATE_TRAITS = (
    "content_description", "sender", "tone", "style", "length", "receiver_info",
)
PHISHING_TRAITS = (
    "phishing_type", "customization_level", "objective", "impersonated_identity",
    "method", "social_engineering_technique", "tone_and_style", "length",
)

REASK_SUFFIX = "\nRespond with valid structured data only."

COUNTRY_LANGUAGES = {
    "united states": "en", "us": "en", "usa": "en",
    "united kingdom": "en", "uk": "en", "gb": "en",
    "italy": "it", "italia": "it", "it": "it",
    "germany": "de", "deutschland": "de", "de": "de",
}

_TEMPLATES = ("company", "employees", "scenarios_legitimate",
              "scenarios_phishing", "email_legitimate", "email_phishing")


def load_template(name: str, prompt_dir: str | None = None) -> str:
    if prompt_dir:
        return Path(prompt_dir, f"{name}.txt").read_text("utf-8")
    return resources.files("phishbench").joinpath(f"prompts/{name}.txt").read_text("utf-8")


def prompt_versions(prompt_dir: str | None = None) -> dict:
    return {
        name: hashlib.sha256(load_template(name, prompt_dir).encode()).hexdigest()[:12]
        for name in _TEMPLATES
    }


@dataclass
class GenerationConfig:
    country: str
    companies: int                   # X
    employees_per_company: int       # Y
    emails_per_employee: int         # N
    benign_ratio: float = 0.5
    language: str = ""

    def __post_init__(self):
        if min(self.companies, self.employees_per_company, self.emails_per_employee) < 1:
            raise GenerationError("companies, employees, and emails must all be >= 1")
        split = Fraction(str(self.benign_ratio)) * self.emails_per_employee
        if split.denominator != 1:
            raise GenerationError(
                f"benign_ratio {self.benign_ratio} x {self.emails_per_employee} "
                "emails is not an integer split"
            )
        if not self.language:
            self.language = COUNTRY_LANGUAGES.get(self.country.strip().lower(), "unknown")

    @property
    def benign_per_employee(self) -> int:
        return int(Fraction(str(self.benign_ratio)) * self.emails_per_employee)

    @property
    def requested(self) -> int:
        return self.companies * self.employees_per_company * self.emails_per_employee


@dataclass(frozen=True)
class CompanyProfile:
    fields: dict

    @classmethod
    def from_payload(cls, payload) -> "CompanyProfile":
        return cls(_exact_fields(payload, COMPANY_FIELDS))


@dataclass(frozen=True)
class EmployeeProfile:
    fields: dict

    @classmethod
    def from_payload(cls, payload) -> "EmployeeProfile":
        fields = _exact_fields(payload, EMPLOYEE_FIELDS)
        try:
            age = int(str(payload["age"]).strip())
        except (ValueError, TypeError) as exc:
            raise GenerationError(f"unparseable age {payload.get('age')!r}",
                                  reason="invalid_fields") from exc
        if not 16 <= age <= 80:
            raise GenerationError(f"age {age} outside [16, 80]", reason="invalid_fields")
        return cls(fields)


@dataclass(frozen=True)
class EmailScenario:
    kind: str                        # legitimate | phishing
    traits: dict

    @classmethod
    def from_payload(cls, kind: str, payload) -> "EmailScenario":
        expected = LEGITIMATE_TRAITS if kind == "legitimate" else PHISHING_TRAITS
        if not isinstance(payload, dict) or set(payload) != set(expected):
            raise GenerationError(
                f"{kind} scenario keys {sorted(payload) if isinstance(payload, dict) else payload!r}"
                f" != expected {sorted(expected)}",
                reason="invalid_fields",
            )
        return cls(kind, {k: str(payload[k]) for k in expected})


@dataclass(frozen=True)
class GeneratedEmail:
    subject: str
    body: str
    kind: str
    scenario_ref: str
    company_ref: str
    employee_ref: str
    language: str

    def to_record(self) -> EmailRecord:
        return EmailRecord(
            id=self.scenario_ref,
            subject=self.subject,
            body=self.body,
            label="benign" if self.kind == "legitimate" else "phishing",
            language=self.language,
            source="e-phishgen",
            generated=True,
        )


@dataclass
class GenerationReport:
    country: str
    provider_id: str
    requested: int
    produced: int = 0
    attempted_emails: int = 0
    never_attempted: int = 0
    discarded: dict = field(default_factory=dict)   # stage -> {reason: count}
    prompt_versions: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def discard(self, stage: str, reason: str, count: int = 1) -> None:
        stage_counts = self.discarded.setdefault(stage, {})
        stage_counts[reason] = stage_counts.get(reason, 0) + count

    def discarded_total(self, stage: str | None = None) -> int:
        stages = [stage] if stage else list(self.discarded)
        return sum(sum(self.discarded.get(s, {}).values()) for s in stages)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, ensure_ascii=False, indent=2)
            fh.write("\n")


def _exact_fields(payload, expected) -> dict:
    if not isinstance(payload, dict):
        raise GenerationError(f"payload is not an object: {payload!r}",
                              reason="invalid_fields")
    missing = [f for f in expected if f not in payload or str(payload[f]).strip() == ""]
    if missing:
        raise GenerationError(f"missing/empty fields {missing}", reason="invalid_fields")
    return {f: str(payload[f]) for f in expected}


_FENCE_RE = re.compile(r"^```[a-zA-Z]*\n|\n?```$")


def parse_structured(text: str):
    """Parse the JSON value from an LLM response (code fences tolerated)."""
    text = _FENCE_RE.sub("", text.strip()).strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    # fall back to the outermost bracketed span
    for open_ch, close_ch in (("[", "]"), ("{", "}")):
        start = text.find(open_ch)
        end = text.rfind(close_ch)
        if start != -1 and end > start:
            try:
                return json.loads(text[start:end + 1])
            except json.JSONDecodeError:
                continue
    raise GenerationError("response is not structured data")


class GenerationPipeline:
    """Drives the four stages against one gateway and keeps the books."""

    def __init__(self, config: GenerationConfig, gateway: Gateway,
                 prompt_dir: str | None = None):
        self.config = config
        self.gateway = gateway
        self.prompt_dir = prompt_dir
        self.report = GenerationReport(
            country=config.country,
            provider_id=gateway.config.provider_id,
            requested=config.requested,
            prompt_versions=prompt_versions(prompt_dir),
            config={
                "country": config.country,
                "companies": config.companies,
                "employees_per_company": config.employees_per_company,
                "emails_per_employee": config.emails_per_employee,
                "benign_ratio": config.benign_ratio,
                "language": config.language,
                "temperature": gateway.config.temperature,
            },
        )

    # -- plumbing ----------------------------------------------------------

    def _ask_structured(self, prompt: str, stage: str):
        """One completion parsed as JSON, with a single stricter re-ask."""
        try:
            exchange = self.gateway.complete(prompt)
        except TransportError as exc:
            raise GenerationError(f"{stage}: provider failure: {exc}",
                                  reason="provider_error") from exc
        try:
            return parse_structured(exchange.response)
        except GenerationError:
            pass
        try:
            exchange = self.gateway.complete(prompt + REASK_SUFFIX)
        except TransportError as exc:
            raise GenerationError(f"{stage}: provider failure on re-ask: {exc}",
                                  reason="provider_error") from exc
        return parse_structured(exchange.response)

    def _collect(self, stage: str, prompt_fn, parse_one, want: int) -> list:
        """Ask for `want` items, validate each, top up once if short."""
        items: list = []

        def attempt(count: int) -> None:
            try:
                payload = self._ask_structured(prompt_fn(count), stage)
            except GenerationError as exc:
                self.report.discard(stage, exc.reason)
                return
            if not isinstance(payload, list):
                payload = [payload]
            for obj in payload:
                if len(items) >= want:
                    break
                try:
                    items.append(parse_one(obj))
                except GenerationError as exc:
                    self.report.discard(stage, exc.reason)

        attempt(want)
        if len(items) < want:
            attempt(want - len(items))  # one top-up re-ask
        return items

    # -- stages ------------------------------------------------------------

    def generate_companies(self) -> list[CompanyProfile]:
        template = load_template("company", self.prompt_dir)
        companies = self._collect(
            "companies",
            lambda count: template.format(count=count, country=self.config.country),
            CompanyProfile.from_payload,
            self.config.companies,
        )
        if not companies:
            raise GenerationError(
                f"no valid companies for {self.config.country} after retry; aborting"
            )
        return companies

    def generate_employees(self, company: CompanyProfile) -> list[EmployeeProfile]:
        template = load_template("employees", self.prompt_dir)
        return self._collect(
            "employees",
            lambda count: template.format(
                count=count, company=json.dumps(company.fields, ensure_ascii=False)
            ),
            EmployeeProfile.from_payload,
            self.config.employees_per_company,
        )

    def generate_scenarios(self, kind: str, count: int, company: CompanyProfile,
                           employee: EmployeeProfile) -> list[EmailScenario]:
        template = load_template(f"scenarios_{kind}", self.prompt_dir)
        return self._collect(
            "scenarios",
            lambda c: template.format(
                count=c,
                company=json.dumps(company.fields, ensure_ascii=False),
                employee=json.dumps(employee.fields, ensure_ascii=False),
            ),
            lambda obj: EmailScenario.from_payload(kind, obj),
            count,
        )

    def generate_email(self, scenario: EmailScenario, company: CompanyProfile,
                       employee: EmployeeProfile, ref: str) -> GeneratedEmail | None:
        template = load_template(f"email_{scenario.kind}", self.prompt_dir)
        prompt = template.format(
            country=self.config.country,
            company=json.dumps(company.fields, ensure_ascii=False),
            employee=json.dumps(employee.fields, ensure_ascii=False),
            scenario=json.dumps(scenario.traits, ensure_ascii=False),
        )
        self.report.attempted_emails += 1
        try:
            payload = self._ask_structured(prompt, "emails")
        except GenerationError as exc:
            self.report.discard("emails", exc.reason)
            return None
        if not isinstance(payload, dict):
            self.report.discard("emails", "malformed_payload")
            return None
        subject = clean_text(str(payload.get("subject", "")))
        body = clean_text(str(payload.get("body", "")))
        if not subject or not body:
            self.report.discard("emails", "empty_subject_or_body")
            return None
        return GeneratedEmail(
            subject=subject,
            body=body,
            kind=scenario.kind,
            scenario_ref=ref,
            company_ref=company.fields["company_name"],
            employee_ref=employee.fields["name"],
            language=self.config.language,
        )

    # -- orchestration -----------------------------------------------------

    def run(self) -> list[EmailRecord]:
        cfg = self.config
        report = self.report
        emails: list[EmailRecord] = []
        n_benign = cfg.benign_per_employee
        n_phish = cfg.emails_per_employee - n_benign

        companies = self.generate_companies()
        report.never_attempted += (
            (cfg.companies - len(companies))
            * cfg.employees_per_company * cfg.emails_per_employee
        )
        for ci, company in enumerate(companies):
            employees = self.generate_employees(company)
            report.never_attempted += (
                (cfg.employees_per_company - len(employees)) * cfg.emails_per_employee
            )
            for ei, employee in enumerate(employees):
                for kind, count in (("legitimate", n_benign), ("phishing", n_phish)):
                    if count == 0:
                        continue
                    scenarios = self.generate_scenarios(kind, count, company, employee)
                    report.never_attempted += count - len(scenarios)
                    for si, scenario in enumerate(scenarios):
                        ref = f"ephish-{cfg.language}-c{ci:03d}-e{ei:02d}-{kind[:4]}{si:02d}"
                        email = self.generate_email(scenario, company, employee, ref)
                        if email is not None:
                            emails.append(email.to_record())
        report.produced = len(emails)
        return emails


def run_pipeline(config: GenerationConfig, gateway: Gateway, out_path,
                 report_path=None, prompt_dir: str | None = None) -> GenerationReport:
    """Full pipeline to a canonical corpus file plus its report."""
    pipeline = GenerationPipeline(config, gateway, prompt_dir=prompt_dir)
    records = pipeline.run()
    write_canonical(records, out_path)
    report = pipeline.report
    if report_path is None:
        out = Path(out_path)
        report_path = out.with_name(out.stem + ".report.json")
    report.save(report_path)
    return report
