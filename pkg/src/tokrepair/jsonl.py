"""JSON Lines helpers plus (de)serializers for the file-based stage formats."""

import json

from .ctok import IDENTIFIER, Token
from .encoding import Sample
from .mining import CommitRecord, FileChange, FunctionPair


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}:{line_no}: invalid JSON: {err}") from err


def write_jsonl(path, records):
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            count += 1
    return count


def commit_from_dict(obj) -> CommitRecord:
    files = tuple(
        FileChange(f["path"], f.get("before", ""), f.get("after", "")) for f in obj.get("files", [])
    )
    return CommitRecord(obj.get("message", ""), files, obj.get("meta", {}))


def pair_to_dict(pair: FunctionPair) -> dict:
    return {
        "signature": list(pair.signature),
        "before": [t.text for t in pair.before],
        "before_lines": [t.line for t in pair.before],
        "after": [t.text for t in pair.after],
        "after_lines": [t.line for t in pair.after],
        "meta": pair.meta,
    }


def pair_from_dict(obj) -> FunctionPair:
    # Token kinds are not needed downstream of mining, so rehydrated tokens
    # carry a placeholder kind.
    before = [Token(t, IDENTIFIER, ln) for t, ln in zip(obj["before"], obj["before_lines"])]
    after = [Token(t, IDENTIFIER, ln) for t, ln in zip(obj["after"], obj["after_lines"])]
    return FunctionPair(tuple(obj["signature"]), before, after, obj.get("meta", {}))


def sample_to_dict(sample: Sample) -> dict:
    return {
        "cwe": sample.cwe_token,
        "input": list(sample.input),
        "target": list(sample.target),
        "meta": sample.meta,
    }


def sample_from_dict(obj) -> Sample:
    return Sample(obj["cwe"], tuple(obj["input"]), tuple(obj["target"]), obj.get("meta", {}))
