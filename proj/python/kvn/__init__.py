"""Koopman-von Neumann generator estimation, spectra, propagation and circuits."""

import json

from ._kvn import (
    ConfigError,
    Dictionary,
    Error,
    Generators,
    NumericalError,
    ParseError,
    PreconditionError,
    StructureNotFound,
    System,
    Whitening,
    arrow_circuit,
    arrow_exponential,
    detect_structure,
    eig_general,
    eig_skew,
    estimate,
    estimate_from_gram,
    evolve,
    fit,
    kvn_spectrum,
    load_archive as _load_archive,
    make_system,
    propagator,
    reference_oscillator_galerkin,
    run_cli,
    save_archive as _save_archive,
    set_threads,
    simulate,
    wavefunction_values,
    whiten,
)
from ._kvn import _build_dictionary


def build_dictionary(spec, system):
    """Dictionary from a basis description such as {"basis": "rff", "n": 300}."""
    return _build_dictionary(json.dumps(spec), system)


def describe(dictionary):
    return json.loads(dictionary._description())


def save_archive(generators, whitening, path, meta=None):
    _save_archive(generators, whitening, str(path), json.dumps(meta or {}))


def load_archive(path):
    gen, white, header = _load_archive(str(path))
    return gen, white, json.loads(header)
