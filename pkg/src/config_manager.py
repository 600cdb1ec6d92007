import copy
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from src.algebroid import Algebroid, AlgebroidError, Chart, PoissonBivector, cotangent_algebroid, lie_algebra_algebroid
from src.etale import CoordForm, EtaleError, FiniteActionGroupoid, cyclic_rotation_groupoid
from src.expr import ExprError, parse_expr
from src.oracles import (
    DEVELOPMENT, ORACLES, PAIR, ZERO_POISSON, MatrixRepresentation, OracleError, so3_representation,
    so3_structure_constants,
)

logger = logging.getLogger('apaths')

TASKS = ('check-algebroid', 'integrate-path', 'homotopy', 'oracle-suite', 'symplectic-suite',
         'etale-suite', 'convergence')
MODELS = ('poisson', 'algebroid', 'lie_algebra', 'groupoid')

DEFAULT_NUMERICS = {
    'n_t': 129,
    'n_eps': 129,
    'seed': 1729,
    'samples': 100,
    'trials': 100,
    'tolerances': {},
    'convergence_n_t': [33, 65, 129, 257],
}
DEFAULT_BOX = (-2.0, 2.0)

# models each task can run on
TASK_MODELS = {
    'check-algebroid': ('poisson', 'algebroid', 'lie_algebra'),
    'integrate-path': ('poisson', 'algebroid', 'lie_algebra'),
    'homotopy': ('poisson', 'algebroid', 'lie_algebra'),
    'oracle-suite': ('poisson', 'lie_algebra'),
    'symplectic-suite': ('poisson',),
    'etale-suite': ('groupoid',),
    'convergence': ('lie_algebra',),
}


class ConfigError(ValueError):
    """
    Invalid configuration. `path` is the dotted location in the document;
    `line`/`column` locate malformed JSON or YAML.
    """

    def __init__(self, message, path=None, line=None, column=None, offset=None):
        super().__init__(message)
        self.path = path
        self.line = line
        self.column = column
        self.offset = offset


@dataclass
class Numerics:
    n_t: int
    n_eps: int
    seed: int
    samples: int
    trials: int
    tolerances: Dict[str, float] = field(default_factory=dict)
    convergence_n_t: List[int] = field(default_factory=list)

    def tolerance(self, name, default):
        return float(self.tolerances.get(name, default))


@dataclass
class CurveInput:
    """
    Fiber curve for integrate-path (x1 = t) or a family for homotopy
    (x1 = t, x2 = eps).
    """
    x0: np.ndarray
    fiber: list
    expect: Optional[bool] = None


@dataclass
class EtaleInput:
    groupoid: FiniteActionGroupoid
    form: Optional[CoordForm]
    functions: list
    copies: List[int]


@dataclass
class RunConfig:
    task: str
    model: str
    chart: Chart
    numerics: Numerics
    bivector: Optional[PoissonBivector] = None
    algebroid: Optional[Algebroid] = None
    representation: Optional[MatrixRepresentation] = None
    etale: Optional[EtaleInput] = None
    path: Optional[CurveInput] = None
    family: Optional[CurveInput] = None
    oracle: Optional[str] = None
    report_path: Optional[str] = None
    csv_path: Optional[str] = None
    document: Dict[str, Any] = field(default_factory=dict)


def _fail(message, path=None, **location):
    logger.error(message)
    raise ConfigError(message, path=path, **location)


class ConfigurationManager:
    """
    Loads and validates a run configuration.

    Args:
        source: Path to a JSON or YAML file, or the document text itself
        overrides: Values from the command line (task, seed, n_t, n_eps, report, csv)
    """

    def __init__(self, source, overrides=None):
        self.source = source
        self.overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        self.config = None
        self.load_config()

    def _read(self):
        source = self.source
        if isinstance(source, dict):
            return json.dumps(source), True
        text = str(source)
        if text.lstrip().startswith('{') or '\n' in text:
            return text, text.lstrip().startswith('{')
        logger.info(f"Loading configuration from {text}")
        if not os.path.exists(text):
            _fail(f"Configuration file not found: {text}")
        with open(text, 'r', encoding='utf-8') as f:
            content = f.read()
        return content, text.endswith('.json') or content.lstrip().startswith('{')

    def load_config(self):
        """
        Decode the document and validate it.

        Raises:
            ConfigError: If the document is malformed or invalid
        """
        text, is_json = self._read()
        try:
            document = json.loads(text) if is_json else yaml.safe_load(text)
        except json.JSONDecodeError as e:
            _fail(f"Malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}", line=e.lineno, column=e.colno)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            line = mark.line + 1 if mark else None
            column = mark.column + 1 if mark else None
            _fail(f"Malformed YAML at line {line}, column {column}: {e}", line=line, column=column)
        if not isinstance(document, dict):
            _fail("Configuration must be a mapping at the top level")

        self.config = document
        self._apply_overrides()
        self.validate_config()
        logger.info("Configuration loaded successfully")

    def _apply_overrides(self):
        document = self.config
        numerics = document.setdefault('numerics', {})
        if not isinstance(numerics, dict):
            _fail("numerics must be a mapping", path='numerics')
        for key in ('seed', 'n_t', 'n_eps'):
            if key in self.overrides:
                numerics[key] = self.overrides[key]
        if 'task' in self.overrides:
            document['task'] = self.overrides['task']
        output = document.setdefault('output', {})
        for key in ('report', 'csv'):
            if key in self.overrides:
                output[key] = self.overrides[key]

    def validate_config(self):
        """
        Check required sections and numeric ranges and fill defaults.

        Raises:
            ConfigError: If the configuration is invalid
        """
        document = self.config
        task = document.get('task')
        if task is None:
            _fail("Missing required configuration parameter: task", path='task')
        if task not in TASKS:
            _fail(f"Unknown task {task!r}; expected one of {', '.join(TASKS)}", path='task')

        numerics = document['numerics']
        for key, value in DEFAULT_NUMERICS.items():
            if key not in numerics:
                numerics[key] = copy.deepcopy(value)

        self._validate_numeric_range('numerics.n_t', 3, 1_000_000, integer=True)
        self._validate_numeric_range('numerics.n_eps', 3, 1_000_000, integer=True)
        self._validate_numeric_range('numerics.seed', 0, 2 ** 64 - 1, integer=True)
        self._validate_numeric_range('numerics.samples', 1, 1_000_000, integer=True)
        self._validate_numeric_range('numerics.trials', 1, 1_000_000, integer=True)
        if not isinstance(numerics['tolerances'], dict):
            _fail("numerics.tolerances must be a mapping", path='numerics.tolerances')
        for name in numerics['tolerances']:
            self._validate_numeric_range(f'numerics.tolerances.{name}', 0.0, float('inf'))
        sizes = numerics['convergence_n_t']
        if not isinstance(sizes, list) or len(sizes) < 2:
            _fail("numerics.convergence_n_t needs at least two grid sizes", path='numerics.convergence_n_t')
        for index in range(len(sizes)):
            self._validate_numeric_range(f'numerics.convergence_n_t.{index}', 5, 1_000_000, integer=True)

        model = self._model_kind()
        if model not in TASK_MODELS[task]:
            _fail(f"Task {task} cannot run on a {model} model; expected one of {', '.join(TASK_MODELS[task])}",
                  path='model')
        if task == 'integrate-path' and 'path' not in document:
            _fail("Missing required configuration section: path", path='path')
        if task == 'homotopy' and 'family' not in document:
            _fail("Missing required configuration section: family", path='family')
        oracle = document.get('oracle')
        if oracle is not None and oracle not in ORACLES:
            _fail(f"Unknown oracle {oracle!r}; expected one of {', '.join(ORACLES)}", path='oracle')

        logger.info("Configuration validation successful")

    def _validate_numeric_range(self, param_path, min_val, max_val, integer=False):
        """
        Validate that a numeric parameter is within the specified range.

        Args:
            param_path: Parameter path in dot notation (e.g., 'numerics.n_t')
            min_val: Minimum allowed value
            max_val: Maximum allowed value
            integer: Require an integral value

        Raises:
            ConfigError: If the parameter is not within the specified range
        """
        value = self.get_value(param_path)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(f"Parameter {param_path} must be numeric, got {type(value).__name__}", path=param_path)
        if integer and int(value) != value:
            _fail(f"Parameter {param_path} must be an integer, got {value}", path=param_path)
        if value < min_val or value > max_val:
            _fail(f"Parameter {param_path} must be between {min_val} and {max_val}, got {value}", path=param_path)

    def _model_kind(self):
        document = self.config
        model = document.get('model')
        if model is None:
            if 'poisson' in document:
                document['model'] = {'poisson': document.pop('poisson')}
                model = document['model']
            else:
                _fail("Missing required configuration section: model", path='model')
        if not isinstance(model, dict):
            _fail("model must be a mapping", path='model')
        kinds = [kind for kind in MODELS if kind in model]
        if len(kinds) != 1:
            _fail(f"model needs exactly one of {', '.join(MODELS)}, got {kinds or 'none'}", path='model')
        return kinds[0]

    def get_config(self):
        """
        Get the configuration.

        Returns:
            dict: The configuration document with defaults and overrides applied
        """
        return self.config

    def get_value(self, param_path, default=None):
        """
        Get a configuration value by path; list positions are numeric parts.

        Args:
            param_path: Parameter path in dot notation (e.g., 'numerics.tolerances.jacobi')
            default: Default value to return if the parameter is not found

        Returns:
            The configuration value, or the default value if not found
        """
        try:
            value = self.config
            for part in param_path.split('.'):
                value = value[int(part)] if isinstance(value, list) else value[part]
            return value
        except (KeyError, TypeError, IndexError, ValueError):
            logger.debug(f"Configuration parameter not found: {param_path}, using default: {default}")
            return default

    # -- typed view -----------------------------------------------------------

    def run_config(self):
        """
        Build the RunConfig with every expression parsed.

        Raises:
            ConfigError: On expression errors (with the field path and offset) or invalid model data
        """
        document = self.config
        numerics = document['numerics']
        run = RunConfig(
            task=document['task'],
            model=self._model_kind(),
            chart=self._chart(),
            numerics=Numerics(
                n_t=int(numerics['n_t']), n_eps=int(numerics['n_eps']), seed=int(numerics['seed']),
                samples=int(numerics['samples']), trials=int(numerics['trials']),
                tolerances={k: float(v) for k, v in numerics['tolerances'].items()},
                convergence_n_t=[int(n) for n in numerics['convergence_n_t']],
            ),
            oracle=document.get('oracle'),
            report_path=document['output'].get('report'),
            csv_path=document['output'].get('csv'),
            document=document,
        )
        try:
            self._build_model(run)
            if 'path' in document:
                run.path = self._curve('path', 1, run.chart.dim)
            if 'family' in document:
                run.family = self._curve('family', 2, run.chart.dim)
        except (AlgebroidError, EtaleError, OracleError) as e:
            _fail(f"Invalid model: {e}", path='model')
        except KeyError as e:
            _fail(f"Missing required configuration field: {e.args[0]}", path=str(e.args[0]))
        except (TypeError, IndexError) as e:
            _fail(f"Malformed configuration section: {e}")
        if run.task == 'oracle-suite' and run.oracle is None:
            run.oracle = self._infer_oracle(run)
        return run

    def _parse(self, text, dim, path):
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            text = repr(float(text))
        if not isinstance(text, str):
            _fail(f"{path} must be an expression string, got {type(text).__name__}", path=path)
        try:
            return parse_expr(text, dim)
        except ExprError as e:
            _fail(f"{path}: {e}", path=path, offset=getattr(e, 'offset', None))

    def _chart(self):
        document = self.config
        if self._model_kind() == 'lie_algebra':
            return Chart.point()
        manifold = document.get('manifold', {})
        dim = manifold.get('dim', document.get('dim'))
        if dim is None:
            _fail("Missing required configuration parameter: manifold.dim", path='manifold.dim')
        if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
            _fail(f"manifold.dim must be a positive integer, got {dim!r}", path='manifold.dim')
        box = manifold.get('box', document.get('box'))
        if box is None:
            return Chart.box(dim, DEFAULT_BOX[1])
        if len(box) == 2 and all(isinstance(v, (int, float)) for v in box):
            box = [box] * dim
        if len(box) != dim or any(len(pair) != 2 or pair[0] >= pair[1] for pair in box):
            _fail(f"manifold.box must give {dim} increasing [lower, upper] pairs", path='manifold.box')
        return Chart.from_bounds(box)

    def _build_model(self, run):
        model = self.config['model']
        dim = run.chart.dim
        if run.model == 'poisson':
            entries = model['poisson'] or []
            parsed = {}
            for index, entry in enumerate(entries):
                path = f'model.poisson.{index}'
                i, j = int(entry['i']), int(entry['j'])
                parsed[(i - 1, j - 1)] = self._parse(entry['expr'], dim, f'{path}.expr')
            run.bivector = PoissonBivector(run.chart, parsed)
            run.algebroid = cotangent_algebroid(run.bivector)
            connection = model.get('connection')
            if connection is not None:
                run.algebroid = run.algebroid.with_connection(self._matrices(connection, dim, 'model.connection'))
        elif run.model == 'algebroid':
            data = model['algebroid']
            rank = int(data['rank'])
            anchor = [[self._parse(e, dim, f'model.algebroid.anchor.{m}.{i}') for i, e in enumerate(row)]
                      for m, row in enumerate(data.get('anchor', []))]
            structure = {}
            for index, entry in enumerate(data.get('structure', [])):
                path = f'model.algebroid.structure.{index}'
                structure[(int(entry['i']) - 1, int(entry['j']) - 1)] = [
                    self._parse(c, dim, f'{path}.components.{k}') for k, c in enumerate(entry['components'])]
            connection = data.get('connection')
            if connection is not None:
                connection = self._matrices(connection, dim, 'model.algebroid.connection')
            run.algebroid = Algebroid(run.chart, rank, anchor, structure, connection, name=data.get('name', 'algebroid'))
        elif run.model == 'lie_algebra':
            data = model['lie_algebra']
            if data == 'so3':
                data = {'constants': so3_structure_constants().tolist(), 'name': 'so3'}
                run.representation = so3_representation()
            run.algebroid = lie_algebra_algebroid(data['constants'], name=data.get('name', 'lie-algebra'))
            if 'generators' in data:
                run.representation = MatrixRepresentation(data['generators'], orthogonal=bool(data.get('orthogonal')),
                                                          name=data.get('name', 'representation'))
            if run.representation is not None:
                run.representation.check_against(run.algebroid)
        else:
            run.etale = self._etale(model['groupoid'], run.chart)

    def _matrices(self, matrices, dim, path):
        return [[[self._parse(e, dim, f'{path}.{m}.{k}.{l}') for l, e in enumerate(row)]
                 for k, row in enumerate(matrix)] for m, matrix in enumerate(matrices)]

    def _etale(self, data, chart):
        dim = chart.dim
        if 'cyclic' in data:
            groupoid = cyclic_rotation_groupoid(int(data['cyclic']), chart)
        else:
            action = [[self._parse(e, dim, f'model.groupoid.action.{g}.{i}') for i, e in enumerate(coords)]
                      for g, coords in enumerate(data['action'])]
            groupoid = FiniteActionGroupoid(chart, data['elements'], data['table'], action,
                                            name=data.get('name', 'action-groupoid'))
        form = None
        if 'form' in data:
            form_data = data['form']
            entries = {}
            for index, entry in enumerate(form_data.get('entries', [])):
                path = f'model.groupoid.form.entries.{index}'
                entries[tuple(int(i) - 1 for i in entry['indices'])] = self._parse(entry['expr'], dim, f'{path}.expr')
            form = CoordForm(dim, int(form_data.get('degree', 2)), entries)
        functions = [self._parse(e, dim, f'model.groupoid.functions.{k}') for k, e in enumerate(data.get('functions', []))]
        copies = [int(c) for c in data.get('copies', [2, 3])]
        return EtaleInput(groupoid, form, functions, copies)

    def _curve(self, section, variables, base_dim):
        data = self.config[section]
        x0 = np.asarray(data.get('x0', [0.0] * base_dim), dtype=float)
        if x0.shape != (base_dim,):
            _fail(f"{section}.x0 must have {base_dim} coordinates", path=f'{section}.x0')
        fiber = [self._parse(e, variables, f'{section}.fiber.{k}') for k, e in enumerate(data['fiber'])]
        expect = data.get('expect')
        return CurveInput(x0, fiber, None if expect is None else bool(expect))

    def _infer_oracle(self, run):
        if run.model == 'lie_algebra':
            if run.representation is None:
                _fail("The development oracle needs model.lie_algebra.generators", path='model.lie_algebra')
            return DEVELOPMENT
        if run.bivector.is_zero():
            return ZERO_POISSON
        if run.algebroid.has_constant_fields() and not run.algebroid.structure:
            return PAIR
        _fail("No oracle groupoid for this model; set 'oracle' explicitly", path='oracle')


def load_config(source, overrides=None):
    """
    Load a configuration file or document text into a RunConfig.

    Raises:
        ConfigError: If the configuration is malformed or invalid
    """
    return ConfigurationManager(source, overrides).run_config()
