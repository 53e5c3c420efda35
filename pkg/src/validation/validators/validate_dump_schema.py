"""
validate_dump_schema.py - Verify an evaluation dump and recompute its metrics

Checks that an HDF5 file written by `refrec eval --dump` has the expected
root attributes, per-episode datasets and summary group, then recomputes
every hard intersection/union from the stored probabilities and ground
truth and compares the result with the stored counts and summary.

REFERENCE: refrec/export.py (dump layout)
"""

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import h5py
import numpy as np

from refrec.objective import IoUParts, pair_counts

METRIC_TOLERANCE = 1e-9


@dataclass
class FieldSpec:
    """Expected layout of a required dump field."""
    path: str
    expected_dtype: str  # 'float64', 'int', 'group'
    expected_ndim: Optional[int]  # None = any
    description: str
    required: bool = True


ROOT_ATTRS = ('pairing', 'threshold', 'step', 'created')
SUMMARY_ATTRS = ('instance_iou', 'overall_iou', 'inter_sum', 'union_sum', 'pairs')

REQUIRED_FIELDS = [
    FieldSpec('/episodes', 'group', None, 'Per-episode container group'),
    FieldSpec('/summary', 'group', None, 'Aggregate metrics group'),
]

# Relative to /episodes/{name}/
EPISODE_FIELDS = [
    FieldSpec('probs', 'float64', 3, 'Predicted probabilities (T, S, S)'),
    FieldSpec('gt', 'int', 3, 'Ground-truth masks (N, S, S)'),
    FieldSpec('match', 'int', 1, 'Prediction index per ground truth (N,)'),
    FieldSpec('inter', 'int', 1, 'Hard intersection per pair (N,)'),
    FieldSpec('union', 'int', 1, 'Hard union per pair (N,)'),
]


@dataclass
class ValidationResult:
    """Result of a single validation check."""
    field: str
    passed: bool
    message: str
    severity: str  # 'error', 'warning', 'info'


def check_field(group: h5py.Group, spec: FieldSpec, prefix: str = '') -> ValidationResult:
    """Check that a field exists and matches its FieldSpec."""
    path = f"{prefix}{spec.path}"
    if spec.path not in group:
        if spec.required:
            return ValidationResult(path, False, f"Required field missing: {path}", 'error')
        return ValidationResult(path, True, f"Optional field not present: {path}", 'info')

    obj = group[spec.path]
    if spec.expected_dtype == 'group':
        if isinstance(obj, h5py.Group):
            return ValidationResult(path, True, f"Group exists: {path}", 'info')
        return ValidationResult(path, False, f"Expected group, got dataset: {path}", 'error')
    if isinstance(obj, h5py.Group):
        return ValidationResult(path, False, f"Expected dataset, got group: {path}", 'error')

    if spec.expected_dtype == 'float64' and not np.issubdtype(obj.dtype, np.floating):
        return ValidationResult(path, False, f"Expected float dtype, got {obj.dtype}: {path}", 'error')
    if spec.expected_dtype == 'int' and not np.issubdtype(obj.dtype, np.integer):
        return ValidationResult(path, False, f"Expected int dtype, got {obj.dtype}: {path}", 'error')
    if spec.expected_ndim is not None and obj.ndim != spec.expected_ndim:
        return ValidationResult(path, False,
            f"Expected {spec.expected_ndim}D array, got {obj.ndim}D: {path}", 'error')
    return ValidationResult(path, True, f"Field valid: {path} (shape={obj.shape}, dtype={obj.dtype})", 'info')


def check_attrs(obj, names, where: str) -> List[ValidationResult]:
    missing = [n for n in names if n not in obj.attrs]
    if missing:
        return [ValidationResult(where, False, f"Missing attributes on {where}: {', '.join(missing)}", 'error')]
    return [ValidationResult(where, True, f"Attributes present on {where}", 'info')]


def check_episode(grp: h5py.Group, name: str, threshold: float, parts: IoUParts) -> List[ValidationResult]:
    """Schema checks for one episode, then recompute its pair counts into parts."""
    prefix = f"/episodes/{name}/"
    results = [check_field(grp, spec, prefix) for spec in EPISODE_FIELDS]
    results += check_attrs(grp, ('seed', 'phrases'), prefix.rstrip('/'))
    if any(not r.passed and r.severity == 'error' for r in results):
        return results

    probs, gt = grp['probs'][:], grp['gt'][:]
    match, inter, union = grp['match'][:], grp['inter'][:], grp['union'][:]
    n = gt.shape[0]
    if not (match.shape == inter.shape == union.shape == (n,)):
        results.append(ValidationResult(prefix, False,
            f"match/inter/union lengths {match.shape}/{inter.shape}/{union.shape} differ from {n} masks", 'error'))
        return results
    if probs.shape[1:] != gt.shape[1:]:
        results.append(ValidationResult(prefix, False,
            f"Prediction size {probs.shape[1:]} differs from ground truth {gt.shape[1:]}", 'error'))
        return results
    if n and (match.min() < 0 or match.max() >= probs.shape[0] or len(set(match.tolist())) != n):
        results.append(ValidationResult(f"{prefix}match", False,
            f"match is not an injective map into {probs.shape[0]} predictions", 'error'))
        return results
    try:
        phrases = json.loads(grp.attrs['phrases'])
    except (TypeError, ValueError):
        phrases = None
    if not isinstance(phrases, list):
        results.append(ValidationResult(prefix, False, "phrases attribute is not a JSON array", 'error'))

    for g in range(n):
        i, u = pair_counts(probs[match[g]], gt[g].astype(bool), threshold)
        if i != inter[g] or u != union[g]:
            results.append(ValidationResult(f"{prefix}inter", False,
                f"Pair {g}: stored inter/union {inter[g]}/{union[g]}, recomputed {i}/{u}", 'error'))
        parts.add(i, u)
    return results


def validate_dump_schema(h5_path: Path) -> Tuple[bool, List[ValidationResult]]:
    """
    Validate a prediction dump.

    Args:
        h5_path: Path to dump file

    Returns:
        (all_passed, results): Boolean success and list of validation results
    """
    results = []
    h5_path = Path(h5_path)
    if not h5_path.exists():
        results.append(ValidationResult(str(h5_path), False, f"H5 file not found: {h5_path}", 'error'))
        return False, results

    try:
        with h5py.File(str(h5_path), 'r') as f:
            results += check_attrs(f, ROOT_ATTRS, '/')
            for spec in REQUIRED_FIELDS:
                results.append(check_field(f, spec))

            threshold = float(f.attrs.get('threshold', 0.5))
            parts = IoUParts()
            if '/episodes' in f:
                names = sorted(f['episodes'].keys())
                results.append(ValidationResult('/episodes', bool(names), f"Found {len(names)} episodes",
                                                'info' if names else 'error'))
                for name in names:
                    results += check_episode(f['episodes'][name], name, threshold, parts)

            if '/summary' in f:
                summary = f['summary']
                results += check_attrs(summary, SUMMARY_ATTRS, '/summary')
                recomputed = {'instance_iou': parts.instance_iou, 'overall_iou': parts.overall_iou,
                              'inter_sum': parts.inter_sum, 'union_sum': parts.union_sum, 'pairs': parts.pairs}
                for key, value in recomputed.items():
                    if key not in summary.attrs:
                        continue
                    stored = float(summary.attrs[key])
                    if abs(stored - value) > METRIC_TOLERANCE:
                        results.append(ValidationResult(f'/summary/{key}', False,
                            f"Summary {key}={stored} but recomputed {value}", 'error'))
                    else:
                        results.append(ValidationResult(f'/summary/{key}', True,
                            f"Summary {key} matches ({value:.6f})", 'info'))
    except OSError as e:
        results.append(ValidationResult(str(h5_path), False, f"Error reading H5 file: {e}", 'error'))
        return False, results

    errors = [r for r in results if r.severity == 'error' and not r.passed]
    return len(errors) == 0, results


def print_results(results: List[ValidationResult], verbose: bool = False):
    """Print validation results."""
    errors = [r for r in results if r.severity == 'error' and not r.passed]
    warnings = [r for r in results if r.severity == 'warning' and not r.passed]

    print(f"\n{'='*60}")
    print("PREDICTION DUMP VALIDATION RESULTS")
    print(f"{'='*60}")

    if errors:
        print(f"\nERRORS ({len(errors)}):")
        for r in errors:
            print(f"  [FAIL] {r.message}")

    if warnings:
        print(f"\nWARNINGS ({len(warnings)}):")
        for r in warnings:
            print(f"  [WARN] {r.message}")

    if verbose:
        print(f"\nPASSED ({len([r for r in results if r.passed])}):")
        for r in results:
            if r.passed and r.severity == 'info':
                print(f"  [OK] {r.message}")

    print(f"\n{'='*60}")
    if not errors:
        print("RESULT: PASSED - dump is well formed and its metrics recompute exactly")
    else:
        print(f"RESULT: FAILED - {len(errors)} errors found")
    print(f"{'='*60}\n")


def main(argv=None):
    """Command-line entry point."""
    import argparse

    parser = argparse.ArgumentParser(description='Validate a refrec prediction dump')
    parser.add_argument('h5_file', type=str, help='Path to H5 dump')
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='Show all validation results, not just errors')
    args = parser.parse_args(argv)

    passed, results = validate_dump_schema(Path(args.h5_file))
    print_results(results, args.verbose)
    return 0 if passed else 1


if __name__ == '__main__':
    sys.exit(main())
