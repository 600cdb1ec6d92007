import itertools
import logging
import time

import numpy as np

from src import __version__
from src.algebroid import (
    check_anchor_homomorphism, check_leibniz, check_poisson_jacobi, check_section_jacobi,
)
from src.config_manager import ConfigError
from src.etale import (
    bracket_from_form, check_arrow_invariance, check_invariance, check_presentation_independence,
    function_invariance_defect, invariant_poisson_bracket, refine_atlas,
)
from src.expr import eval_expr_array
from src.oracles import (
    DEVELOPMENT, PAIR, ZERO_POISSON, check_oracle_functoriality, compare_homotopy_with_development,
    development_convergence, so3_coadjoint_bivector,
)
from src.path_space import (
    EndpointsNotFixedError, EpsilonGrid, PathError, PathFamily, TimeGrid, check_intermediate_slices, default_family,
    is_homotopic_along_family, solve_base_path, solve_homotopy_equation, validate_apath, validate_family,
)
from src.path_symplectic import (
    PathSpaceForm, check_kernel_containment, check_multiplicativity, check_nondegeneracy, groupoid_model,
    oracle_reduced_bracket, pairing_matrix,
)
from src.report import CheckReport, Report, emit_convergence_table, emit_matrix_csv, emit_report
from src.sampling import (
    composable_pair, gauge_path_family, random_christoffels, random_even_polynomial, random_polynomial,
    zero_poisson_pair,
)
from src.utils.check_utils import record_failures

logger = logging.getLogger('apaths')


class SuiteRunner:
    """
    Runs one task of a RunConfig and collects its records into a Report.
    """

    def __init__(self, config):
        self.config = config
        self.numerics = config.numerics
        self.report = Report(version=__version__, seed=self.numerics.seed, config=config.document)
        self.convergence_rows = None
        self.pairing = None
        self.tasks = {
            'check-algebroid': self.check_algebroid,
            'integrate-path': self.integrate_path,
            'homotopy': self.homotopy,
            'oracle-suite': self.oracle_suite,
            'symplectic-suite': self.symplectic_suite,
            'etale-suite': self.etale_suite,
            'convergence': self.convergence,
        }

    def rng(self):
        return np.random.default_rng(self.numerics.seed)

    def run(self):
        """
        Run the configured task.

        Returns:
            Report: Records in declaration order; pass is their conjunction
        """
        task = self.config.task
        logger.info(f"Running {task} on a {self.config.model} model (seed {self.numerics.seed})")
        started = time.perf_counter()
        self.tasks[task]()
        self.report.wall_ms = (time.perf_counter() - started) * 1000.0
        logger.info(f"Task {task} finished: {'PASS' if self.report.passed else 'FAIL'} "
                    f"({len(self.report.records)} records, {self.report.wall_ms:.0f} ms)")
        return self.report

    def record(self, name, check, *args, **kwargs):
        """Run a check, converting exceptions into a failed record named `name`."""
        result = record_failures(name, reraise=(ConfigError,))(check)(*args, **kwargs)
        for item in result if isinstance(result, list) else [result]:
            self.report.add(item)

    @property
    def time_grid(self):
        return TimeGrid(self.numerics.n_t)

    @property
    def eps_grid(self):
        return EpsilonGrid(self.numerics.n_eps)

    # -- check-algebroid --------------------------------------------------------

    def check_algebroid(self):
        cfg, numerics = self.config, self.numerics
        algebroid = cfg.algebroid
        samples, seed = numerics.samples, numerics.seed
        if cfg.bivector is not None:
            self.record('poisson-jacobi', check_poisson_jacobi, cfg.bivector, samples=samples,
                        tol=numerics.tolerance('jacobi', 1e-6), seed=seed)
        self.record('anchor-homomorphism', check_anchor_homomorphism, algebroid, samples=samples,
                    tol=numerics.tolerance('anchor', 1e-6), seed=seed)
        self.record('section-jacobi', check_section_jacobi, algebroid, samples=samples,
                    tol=numerics.tolerance('jacobi', 1e-6), seed=seed)
        if algebroid.chart.dim:
            f = random_polynomial(self.rng(), algebroid.chart.dim)
            self.record('leibniz', check_leibniz, algebroid, f, samples=samples,
                        tol=numerics.tolerance('leibniz', 1e-6), seed=seed)
        if cfg.representation is not None:
            self.record('representation', self._representation_record)

    def _representation_record(self):
        defect = self.config.representation.check_against(self.config.algebroid)
        return CheckReport.from_residual('representation', defect, self.numerics.tolerance('representation', 1e-10))

    # -- integrate-path --------------------------------------------------------

    def integrate_path(self):
        self.record('a-path', self._integrate_path)

    def _integrate_path(self):
        cfg = self.config
        grid = self.time_grid
        curve = cfg.path
        if len(curve.fiber) != cfg.algebroid.rank:
            raise PathError(f"Path fiber has {len(curve.fiber)} components, algebroid rank is {cfg.algebroid.rank}")
        times = grid.nodes[:, None]
        fiber = np.stack([eval_expr_array(e, times) for e in curve.fiber], axis=-1)
        path = solve_base_path(cfg.algebroid, curve.x0, fiber, grid)
        report = validate_apath(path, self.numerics.tolerance('path', grid.path_tolerance()))
        report.details.update(source=path.source, target=path.target)
        return report

    # -- homotopy -------------------------------------------------------------

    def _configured_family(self, algebroid=None):
        cfg = self.config
        algebroid = algebroid or cfg.algebroid
        time_grid, eps_grid = self.time_grid, self.eps_grid
        if len(cfg.family.fiber) != algebroid.rank:
            raise PathError(f"Family fiber has {len(cfg.family.fiber)} components, algebroid rank is {algebroid.rank}")
        t, eps = np.meshgrid(time_grid.nodes, eps_grid.nodes)
        points = np.stack([t, eps], axis=-1)
        fiber = np.stack([eval_expr_array(e, points) for e in cfg.family.fiber], axis=-1)
        return PathFamily.from_fiber(algebroid, cfg.family.x0, fiber, time_grid, eps_grid)

    def homotopy(self):
        self.record('family', self._family_record)
        self.record('homotopy', self._homotopy_record)
        if self.config.chart.dim:
            self.record('connection-independence', self._connection_independence)

    def _family_record(self):
        return validate_family(self._configured_family(), self.numerics.tolerances.get('path'))

    def _homotopy_record(self):
        family = self._configured_family()
        expect = self.config.family.expect
        try:
            report = is_homotopic_along_family(family, self.numerics.tolerances.get('homotopy'))
        except EndpointsNotFixedError:
            if expect is not False:
                raise
            logger.info("Family endpoints move; not homotopic as expected")
            return CheckReport.from_residual('homotopy', 0.0, 1.0, homotopic=False, expected=False,
                                             endpoint_drift=family.endpoint_drift())
        homotopic = report.passed
        report.details['homotopic'] = homotopic
        if expect is not None:
            report.details['expected'] = expect
            report.passed = homotopic == expect
        if not homotopic:
            return report
        homotopy_field = solve_homotopy_equation(family)
        return [report, check_intermediate_slices(family, homotopy_field, self.numerics.tolerances.get('slices'))]

    def _connection_independence(self):
        """b with the configured connection against b with random affine Christoffels."""
        algebroid = self.config.algebroid
        chart = algebroid.chart
        christoffels = random_christoffels(self.rng(), chart.dim, algebroid.rank)
        plain = solve_homotopy_equation(self._configured_family()).values
        connected = solve_homotopy_equation(self._configured_family(algebroid.with_connection(christoffels))).values
        residual = float(np.max(np.abs(plain - connected), initial=0.0))
        return CheckReport.from_residual('connection-independence', residual,
                                         self.numerics.tolerance('connection', 1e-4))

    # -- oracle-suite ---------------------------------------------------------

    def oracle_suite(self):
        cfg, numerics = self.config, self.numerics
        rng = self.rng()
        grid = self.time_grid
        algebroid = cfg.algebroid
        tol = numerics.tolerance('oracle', 1e-6)
        logger.info(f"Oracle suite with the {cfg.oracle} oracle over {numerics.trials} trials")

        if cfg.oracle == ZERO_POISSON:
            pairs = [zero_poisson_pair(rng, algebroid, grid, matched=index % 2 == 0)
                     for index in range(numerics.trials)]
            self.record(f'functoriality-{ZERO_POISSON}', check_oracle_functoriality, pairs, ZERO_POISSON,
                        tol=tol, n_eps=numerics.n_eps)
        elif cfg.oracle == PAIR:
            pairs = [composable_pair(rng, algebroid, grid) for _ in range(min(numerics.trials, 20))]
            self.record(f'functoriality-{PAIR}', check_oracle_functoriality, pairs, PAIR, tol=tol)
        else:
            representation = cfg.representation
            pairs = [composable_pair(rng, algebroid, grid) for _ in range(min(numerics.trials, 20))]
            families = self._gauge_families(rng, twisted=True)
            self.record(f'functoriality-{DEVELOPMENT}', check_oracle_functoriality, pairs, DEVELOPMENT,
                        representation=representation, families=families, tol=tol)
            self.record('homotopy-vs-development', self._development_comparison, rng)

    def _gauge_families(self, rng, twisted, count=4):
        families = []
        for index in range(count):
            family, _ = gauge_path_family(rng, self.config.algebroid, self.time_grid, self.eps_grid,
                                          twist=twisted and index % 2 == 1)
            families.append(family)
        return families

    def _development_comparison(self, rng):
        count = min(self.numerics.trials, 50)
        tol = self.numerics.tolerance('development', 1e-4)
        worst = 0.0
        for _ in range(count):
            family, _ = gauge_path_family(rng, self.config.algebroid, self.time_grid, self.eps_grid)
            report = compare_homotopy_with_development(family, self.config.representation, tol=tol)
            worst = max(worst, report.residual)
        return CheckReport.from_residual('homotopy-vs-development', worst, tol, families=count,
                                         n_t=self.numerics.n_t, n_eps=self.numerics.n_eps)

    # -- symplectic-suite -----------------------------------------------------

    def symplectic_suite(self):
        cfg, numerics = self.config, self.numerics
        pi = cfg.bivector
        if cfg.csv_path:
            self.pairing = pairing_matrix(PathSpaceForm(self.time_grid), pi.chart.dim)
        self.record('nondegeneracy', check_nondegeneracy, self.time_grid, pi.chart.dim,
                    tol=numerics.tolerance('nondegeneracy', 1e-10))
        self.record('multiplicativity', self._multiplicativity)
        if pi.is_zero() or _is_so3_coadjoint(pi):
            self.record('kernel-containment', self._kernel_containment)
        else:
            logger.info("No closed-form homotopy family for this bivector; kernel containment skipped")
        if pi.is_zero() or pi.chart.dim % 2 == 0:
            self.record('reduced-bracket', self._reduced_brackets)
        else:
            logger.info("Odd-dimensional nonzero bivector has no explicit symplectic groupoid; reduced brackets skipped")

    def _multiplicativity(self):
        cfg = self.config
        rng = self.rng()
        if cfg.bivector.is_zero():
            p, q = zero_poisson_pair(rng, cfg.algebroid, self.time_grid)
        else:
            p, q = composable_pair(rng, cfg.algebroid, self.time_grid)
        return check_multiplicativity(p, q, trials=self.numerics.trials, seed=self.numerics.seed,
                                      tol=self.numerics.tolerance('multiplicativity', 1e-12))

    def _kernel_containment(self):
        cfg = self.config
        rng = self.rng()
        if cfg.bivector.is_zero():
            p, q = zero_poisson_pair(rng, cfg.algebroid, self.time_grid, matched=True)
            family = default_family(p, q, self.numerics.n_eps)
        else:
            family, _ = gauge_path_family(rng, cfg.algebroid, self.time_grid, self.eps_grid)
        return check_kernel_containment(family, probes=50, seed=self.numerics.seed,
                                        tol=self.numerics.tolerances.get('kernel'))

    def _reduced_brackets(self):
        cfg = self.config
        pi = cfg.bivector
        rng = self.rng()
        model = groupoid_model(ZERO_POISSON if pi.is_zero() else PAIR, pi)
        tol = self.numerics.tolerance('bracket', 1e-12)
        worst = source = target = 0.0
        pairs = 10
        for index in range(pairs):
            f = random_polynomial(rng, pi.chart.dim)
            g = random_polynomial(rng, pi.chart.dim)
            report = oracle_reduced_bracket(model, f, g, samples=self.numerics.samples,
                                            seed=self.numerics.seed + index, tol=tol)
            worst = max(worst, report.residual)
            source = max(source, report.details['source_defect'])
            target = max(target, report.details['target_defect'])
        return CheckReport.from_residual(f'reduced-bracket-{model.name}', worst, tol, pairs=pairs,
                                         source_defect=source, target_defect=target)

    # -- etale-suite ----------------------------------------------------------

    def etale_suite(self):
        data = self.config.etale
        numerics = self.numerics
        groupoid = data.groupoid
        tol = numerics.tolerance('invariance', 1e-9)
        self.record('action-composition', groupoid.check_composition, seed=numerics.seed)
        if data.form is None:
            return
        self.record('form-invariance', check_invariance, groupoid, data.form, tol=tol,
                    samples=numerics.samples, seed=numerics.seed)
        self.record('arrow-invariance', check_arrow_invariance, groupoid, data.form, tol=tol,
                    samples=numerics.samples, seed=numerics.seed)
        if len(data.functions) < 2:
            return
        self.record('bracket-closure', self._bracket_closure)
        self.record('bracket-jacobi', self._bracket_jacobi)
        f, g = data.functions[:2]
        for copies in data.copies:
            refined = refine_atlas(groupoid, copies)
            self.record(f'refined-composition-{copies}', self._refined_composition, refined)
            self.record(f'presentation-independence-{copies}', self._presentation_record, refined, f, g)

    def _refined_composition(self, refined):
        report = refined.check_composition(seed=self.numerics.seed)
        report.name = f'refined-composition-{refined.copies}'
        return report

    def _presentation_record(self, refined, f, g):
        data = self.config.etale
        report = check_presentation_independence(data.groupoid, refined, data.form, f, g,
                                                 tol=self.numerics.tolerance('presentation', 1e-12),
                                                 samples=self.numerics.samples, seed=self.numerics.seed)
        report.name = f'presentation-independence-{refined.copies}'
        return report

    def _bracket_closure(self):
        data = self.config.etale
        groupoid = data.groupoid
        points = groupoid.chart.sample(self.rng(), self.numerics.samples)
        worst = 0.0
        for f, g in itertools.combinations(data.functions, 2):
            bracket = invariant_poisson_bracket(groupoid, data.form, f, g, samples=self.numerics.samples,
                                                seed=self.numerics.seed)
            worst = max(worst, function_invariance_defect(groupoid, bracket, points))
        return CheckReport.from_residual('bracket-closure', worst, self.numerics.tolerance('invariance', 1e-9))

    def _bracket_jacobi(self):
        data = self.config.etale
        chart = data.groupoid.chart
        rng = self.rng()
        functions = list(data.functions)
        while len(functions) < 3:
            functions.append(random_even_polynomial(rng, chart.dim))
        points = chart.sample(rng, self.numerics.samples)
        worst = 0.0
        for f, g, h in itertools.combinations(functions, 3):
            total = sum(eval_expr_array(bracket_from_form(data.form, a, bracket_from_form(data.form, b, c)), points)
                        for a, b, c in ((f, g, h), (g, h, f), (h, f, g)))
            worst = max(worst, float(np.max(np.abs(total))))
        return CheckReport.from_residual('bracket-jacobi', worst, self.numerics.tolerance('jacobi', 1e-6))

    # -- convergence ----------------------------------------------------------

    def convergence(self):
        self.record('convergence', self._convergence)

    def _convergence(self):
        cfg = self.config
        rows = development_convergence(self.rng(), cfg.numerics.convergence_n_t, algebroid=cfg.algebroid,
                                       representation=cfg.representation)
        self.convergence_rows = rows
        floor = self.numerics.tolerance('convergence_floor', 1e-11)
        orders = [row['order'] for row in rows[1:]]
        # an order only counts while the coarser defect is above the floor
        resolved = [row['order'] for previous, row in zip(rows, rows[1:]) if previous['defect'] > floor]
        passed = all(order is not None and order >= 3.0 for order in resolved)
        return CheckReport(name='convergence', residual=rows[-1]['defect'],
                           tolerance=self.numerics.tolerance('development', 1e-4),
                           passed=passed and rows[-1]['defect'] < self.numerics.tolerance('development', 1e-4),
                           details={'orders': orders, 'n_t': [row['n_t'] for row in rows]})


def _is_so3_coadjoint(pi):
    if pi.chart.dim != 3:
        return False
    points = pi.chart.sample(np.random.default_rng(0), 8)
    return bool(np.allclose(pi.matrix_at(points), so3_coadjoint_bivector(pi.chart).matrix_at(points)))


def run_suite(config):
    """
    Run a configuration and write its outputs.

    Returns:
        Report: The suite report
    """
    runner = SuiteRunner(config)
    report = runner.run()
    if config.report_path:
        emit_report(report, config.report_path)
    if config.csv_path and runner.convergence_rows is not None:
        emit_convergence_table(runner.convergence_rows, config.csv_path)
    elif config.csv_path and runner.pairing is not None:
        emit_matrix_csv(runner.pairing, config.csv_path)
    return report
