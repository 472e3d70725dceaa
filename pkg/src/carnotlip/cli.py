"""
carnotlip command-line interface.

Every experiment subcommand writes ``<command>.json`` plus CSV tables to the
output directory, prints a text report, and exits 0 when all audited
invariants hold and 1 otherwise. Usage errors exit 2.
"""

import logging
import sys
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Sequence

import click
import numpy as np
import pandas as pd

from . import __version__
from .config import Settings, load_settings
from .group import GroupDescriptor
from .reports import AuditReport, format_report, write_artifacts

logger = logging.getLogger(__name__)

# heavy modules (dyadic, decomposer, cantor, counterexamples) are imported
# inside the commands that need them


@dataclass
class RunContext:
    """Options shared by every subcommand."""
    settings: Settings

    @property
    def seed(self) -> int:
        return self.settings.seed

    @property
    def workers(self) -> int:
        return self.settings.workers

    def cache(self):
        from .cache import CacheManager
        return CacheManager(self.settings.cache_dir)


def parse_group(text: str) -> GroupDescriptor:
    """
    Parse ``heisenberg-N`` or ``euclidean-K`` into a descriptor.

    Example:
        >>> parse_group('heisenberg-2').dim
        5
    """
    kind, _, size = text.partition('-')
    try:
        n = int(size) if size else 1
    except ValueError:
        raise click.BadParameter(f"expected KIND-N, got {text!r}", param_hint='--group')
    if kind == 'heisenberg':
        return GroupDescriptor.heisenberg(n)
    if kind == 'euclidean':
        return GroupDescriptor.euclidean(n)
    raise click.BadParameter(f"unknown group kind {kind!r}", param_hint='--group')


def _parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(',')])
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}",
                                 param_hint='--point')


def _finish(
    ctx: click.Context,
    command: str,
    config: Mapping[str, Any],
    reports: Sequence[AuditReport],
    payload: Optional[Mapping[str, Any]] = None,
    tables: Optional[Mapping[str, pd.DataFrame]] = None
) -> int:
    run: RunContext = ctx.obj
    body: Dict[str, Any] = dict(payload or {})
    body['reports'] = [r.to_dict() for r in reports]
    all_tables: Dict[str, pd.DataFrame] = {}
    for r in reports:
        for name, df in r.tables.items():
            all_tables[f"{r.name}_{name}"] = df
    all_tables.update(tables or {})

    passed = all(r.passed for r in reports)
    body['passed'] = passed
    paths = write_artifacts(run.settings.output_dir, command, __version__, run.seed,
                            config, body, all_tables)
    for r in reports:
        click.echo(format_report(r))
    for path in paths:
        click.echo(f"wrote {path}")
    return 0 if passed else 1


@click.group(context_settings={'help_option_names': ['-h', '--help']})
@click.option('--seed', type=int, default=None, help='Root seed (default from config)')
@click.option('--workers', type=int, default=None, help='Worker processes for sampling')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
              help='Output directory for artifacts')
@click.option('-v', '--verbose', count=True, help='-v for INFO, -vv for DEBUG')
@click.version_option(__version__, prog_name='carnotlip')
@click.pass_context
def cli(ctx: click.Context, seed: Optional[int], workers: Optional[int],
        out_dir: Optional[str], verbose: int) -> None:
    """Lipschitz maps between Carnot groups: audits and experiments."""
    try:
        settings = load_settings(seed=seed, workers=workers, output_dir=out_dir)
    except ValueError as e:
        raise click.UsageError(str(e))
    if verbose:
        level = logging.DEBUG if verbose > 1 else logging.INFO
    else:
        level = getattr(logging, settings.log_level.upper(), logging.WARNING)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    ctx.obj = RunContext(settings)


# ----------------------------------------------------------------------
# group
# ----------------------------------------------------------------------
@cli.group('group')
def group_cmd() -> None:
    """Group arithmetic and quasidistance audits."""


@group_cmd.command('check')
@click.option('--group', 'group_name', default='heisenberg-1', show_default=True)
@click.option('--samples', type=int, default=10_000, show_default=True)
@click.option('--tol', type=float, default=1e-12, show_default=True,
              help='Relative tolerance for the axiom residuals')
@click.pass_context
def group_check(ctx: click.Context, group_name: str, samples: int, tol: float) -> int:
    """Group axioms, quasi-triangle constant and CC comparability."""
    from .group import group_for

    desc = parse_group(group_name)
    G = group_for(desc)
    seed = ctx.obj.seed
    table = G.property_table(samples, seed)
    bad = table[table['max_relative_error'] > tol]
    axioms = AuditReport('group_axioms', bad.empty,
                         {'group': desc.label, 'max_error': float(table['max_relative_error'].max())},
                         bad.to_dict('records'), {'properties': table})
    reports = [axioms, G.quasi_triangle_constant(samples, seed)]
    if desc.kind == 'heisenberg':
        reports.append(G.comparability_band(samples, seed))
    config = {'group': desc.to_json(), 'samples': samples, 'tol': tol}
    return _finish(ctx, 'group_check', config, reports)


# ----------------------------------------------------------------------
# cubes
# ----------------------------------------------------------------------
@cli.group('cubes')
def cubes_cmd() -> None:
    """Dyadic mesh audits."""


@cubes_cmd.command('audit')
@click.option('--group', 'group_name', default='heisenberg-1', show_default=True)
@click.option('--alpha', 'alphas', type=int, multiple=True, default=(1, 2), show_default=True)
@click.option('--samples', type=int, default=100_000, show_default=True)
@click.option('--resolution', type=int, default=6, show_default=True)
@click.pass_context
def cubes_audit(ctx: click.Context, group_name: str, alphas: Sequence[int], samples: int,
                resolution: int) -> int:
    """Tiling coverage, neighbour counts and diameter ratio of the mesh."""
    from .dyadic import DyadicMesh

    desc = parse_group(group_name)
    run: RunContext = ctx.obj
    mesh = DyadicMesh(desc, resolution=resolution, seed=run.seed, cache=run.cache())
    reports = [mesh.tiling_audit(a, samples, run.seed) for a in alphas]

    counts = [mesh.neighbor_count_audit(a) for a in sorted(set(alphas) | {1})]
    ratio = mesh.diameter(0) / mesh.diameter(1)
    children = len(mesh.child_offsets())
    reports.append(AuditReport(
        'mesh_structure',
        len(set(counts)) == 1 and children == mesh.E ** desc.homogeneous_dimension,
        {'neighbor_counts': counts, 'children': children, 'diameter_ratio': ratio},
    ))
    config = {'group': desc.to_json(), 'alphas': list(alphas), 'samples': samples,
              'resolution': resolution}
    return _finish(ctx, 'cubes_audit', config, reports)


# ----------------------------------------------------------------------
# wavelets
# ----------------------------------------------------------------------
@cli.group('wavelets')
def wavelets_cmd() -> None:
    """Haar wavelet structure."""


@wavelets_cmd.command('profile')
@click.option('--group', 'group_name', default='heisenberg-1', show_default=True)
@click.option('--beta', 'betas', type=int, multiple=True, default=(1, 2), show_default=True)
@click.option('--probes', type=int, default=4, show_default=True)
@click.pass_context
def wavelets_profile(ctx: click.Context, group_name: str, betas: Sequence[int],
                     probes: int) -> int:
    """Approximate-orthogonality constant K at each scale."""
    from .dyadic import DyadicMesh
    from .wavelets import orthogonality_table

    desc = parse_group(group_name)
    run: RunContext = ctx.obj
    mesh = DyadicMesh(desc, seed=run.seed, cache=run.cache())
    frames = []
    for beta in betas:
        table = orthogonality_table(mesh, beta, probes=probes, seed=run.seed)
        table.insert(0, 'beta', beta)
        frames.append(table)
    counts = pd.concat(frames, ignore_index=True)
    K = counts.groupby(['beta', 'probe'])['count'].sum().groupby('beta').max()
    report = AuditReport('orthogonality', K.nunique() == 1,
                         {'K': {int(b): int(k) for b, k in K.items()}},
                         tables={'counts': counts})
    config = {'group': desc.to_json(), 'betas': list(betas), 'probes': probes}
    return _finish(ctx, 'wavelets_profile', config, [report])


# ----------------------------------------------------------------------
# pansu
# ----------------------------------------------------------------------
@cli.group('pansu')
def pansu_cmd() -> None:
    """Pansu differentials."""


@pansu_cmd.command('probe')
@click.option('--map', 'map_name', default='identity', show_default=True)
@click.option('--group', 'group_name', default='heisenberg-1', show_default=True)
@click.option('--point', default='0.3,0.1,0.2', show_default=True)
@click.option('--lam', type=float, default=2.0, show_default=True, help='Dilation factor')
@click.option('--epsilon', type=float, default=2.0, show_default=True, help='Cantor parameter')
@click.pass_context
def pansu_probe(ctx: click.Context, map_name: str, group_name: str, point: str, lam: float,
                epsilon: float) -> int:
    """Horizontal matrix MF of a built-in map at one point."""
    from .maps import named_map
    from .pansu import horizontal_matrix

    desc = parse_group(group_name)
    F = named_map(map_name, desc, lam=lam, epsilon=epsilon)
    g = _parse_point(point)
    est = horizontal_matrix(F, g)
    rows = [{'column': i, 'verdict': c.verdict, 'limit': c.limit.tolist(),
             'final_residual': float(c.residuals[-1].max()) if len(c.residuals) else 0.0}
            for i, c in enumerate(est.columns)]
    report = AuditReport('pansu_probe', est.verdict == 'converged',
                         {'map': F.name, 'verdict': est.verdict, 'entry_ratio': est.entry_ratio},
                         tables={'columns': pd.DataFrame(rows)})
    config = {'map': map_name, 'group': desc.to_json(), 'point': g.tolist(), 'lam': lam,
              'epsilon': epsilon}
    return _finish(ctx, 'pansu_probe', config, [report], {'differential': est.to_dict()})


# ----------------------------------------------------------------------
# decompose
# ----------------------------------------------------------------------
@cli.group('decompose')
def decompose_cmd() -> None:
    """Staged biLipschitz decomposition."""


@decompose_cmd.command('run')
@click.option('--map', 'map_name', default='identity', show_default=True)
@click.option('--group', 'group_name', default='heisenberg-1', show_default=True)
@click.option('--delta', type=float, default=0.01, show_default=True)
@click.option('--depth', type=int, default=3, show_default=True)
@click.option('--points', type=int, default=2000, show_default=True)
@click.option('--n-cap', type=int, default=8, show_default=True)
@click.option('--content-rule', type=click.Choice(['as_stated', 'large_content']),
              default='large_content', show_default=True)
@click.option('--lam', type=float, default=2.0, show_default=True, help='Dilation factor')
@click.option('--epsilon', type=float, default=2.0, show_default=True, help='Cantor parameter')
@click.pass_context
def decompose_run(ctx: click.Context, map_name: str, group_name: str, delta: float, depth: int,
                  points: int, n_cap: int, content_rule: str, lam: float, epsilon: float) -> int:
    """Decompose a built-in map into biLipschitz pieces and garbage."""
    from .decomposer import DecomposeConfig, decompose, largest_piece, piece_separation_audit
    from .dyadic import DyadicMesh
    from .maps import named_map
    from .utils import format_bits

    run: RunContext = ctx.obj
    desc = parse_group(group_name)
    F = named_map(map_name, desc, lam=lam, epsilon=epsilon)
    config = DecomposeConfig(delta=delta, depth=depth, points=points, n_cap=n_cap,
                             content_rule=content_rule, seed=run.seed, workers=run.workers)
    mesh = DyadicMesh(F.source, resolution=config.resolution, seed=run.seed, cache=run.cache())
    result = decompose(F, config, mesh)
    audit = piece_separation_audit(result, mesh)
    label, measure = largest_piece(result)

    payload = result.to_payload()
    payload['largest_piece'] = {'label': format_bits(label), 'measure': measure}
    tables = {'pieces': result.piece_table, 'stages': result.stage_table(),
              'pairs': result.pair_table}
    record = {'map': map_name, 'group': desc.to_json(), 'lam': lam, 'epsilon': epsilon,
              **config.to_dict()}
    return _finish(ctx, 'decompose_run', record, [audit], payload, tables)


# ----------------------------------------------------------------------
# cantor
# ----------------------------------------------------------------------
@cli.group('cantor')
def cantor_cmd() -> None:
    """Cantor-set maps from H_1 to R^4."""


@cantor_cmd.command('build')
@click.option('--epsilon', type=float, default=2.0, show_default=True)
@click.option('--beta', type=float, default=None, help='Source ratio (default gamma)')
@click.option('--depth', type=int, default=4, show_default=True)
@click.option('--samples', type=int, default=10_000, show_default=True)
@click.pass_context
def cantor_build(ctx: click.Context, epsilon: float, beta: Optional[float], depth: int,
                 samples: int) -> int:
    """Derive parameters, audit the stage-1 separations and count occupied boxes."""
    from .cantor import (boxes_at_stage, derive_params, image_cloud, occupied_box_count,
                         separation_audit)

    run: RunContext = ctx.obj
    params = derive_params(epsilon, beta, depth)
    audit = separation_audit(params, samples, run.seed)
    counts = []
    for d in range(1, min(depth, 4) + 1):
        cloud = image_cloud(params, d, run.seed, run.workers)
        counts.append({'depth': d, 'occupied': occupied_box_count(cloud, params, d),
                       'expected': 16 ** d})
    count_table = pd.DataFrame(counts, columns=['depth', 'occupied', 'expected'])
    exact = bool((count_table['occupied'] == count_table['expected']).all())
    box_report = AuditReport('occupied_boxes', exact, {'depths': len(counts)},
                             tables={'counts': count_table})

    boxes = [{'side': side, 'digit': b.address.digits[-1], 'center': b.center.tolist(),
              'half_sides': list(b.half_sides)}
             for side in ('source', 'target') for b in boxes_at_stage(1, params, side)]
    payload = {'params': params.to_dict(), 'nominal_lipschitz': params.nominal_lipschitz,
               'source_dimension': params.source_dimension,
               'target_dimension': params.target_dimension}
    config = {'epsilon': epsilon, 'beta': beta, 'depth': depth, 'samples': samples}
    return _finish(ctx, 'cantor_build', config, [audit, box_report], payload,
                   {'stage_one_boxes': pd.DataFrame(boxes)})


@cantor_cmd.command('dim')
@click.option('--epsilon', type=float, default=2.0, show_default=True)
@click.option('--beta', type=float, default=None, help='Source ratio (default gamma)')
@click.option('--depth', type=int, default=6, show_default=True)
@click.option('--pairs', type=int, default=0, show_default=True,
              help='Lipschitz scan pairs (0 skips the scan)')
@click.option('--tol', type=float, default=0.15, show_default=True,
              help='Allowed gap between slope and the target dimension')
@click.pass_context
def cantor_dim(ctx: click.Context, epsilon: float, beta: Optional[float], depth: int,
               pairs: int, tol: float) -> int:
    """Box-counting dimension of the image cloud."""
    from .cantor import derive_params, image_dimension, lipschitz_scan

    run: RunContext = ctx.obj
    params = derive_params(epsilon, beta, depth)
    fit = image_dimension(params, depth, run.seed, run.workers)
    expected = params.target_dimension
    reports = [AuditReport('image_dimension', abs(fit.slope - expected) <= tol,
                           {'slope': fit.slope, 'expected': expected, 'residual': fit.residual},
                           tables={'counts': fit.table()})]
    if pairs > 0:
        reports.append(lipschitz_scan(params, depth, pairs, run.seed, run.workers))
    config = {'epsilon': epsilon, 'beta': beta, 'depth': depth, 'pairs': pairs, 'tol': tol}
    return _finish(ctx, 'cantor_dim', config, reports, {'fit': fit.to_dict()})


# ----------------------------------------------------------------------
# counterexamples
# ----------------------------------------------------------------------
@cli.group('counterex')
def counterex_cmd() -> None:
    """Snowflaked interval and Grushin plane witnesses."""


@counterex_cmd.command('curve')
@click.option('--depth', type=int, default=8, show_default=True)
@click.option('--samples', type=int, default=100_000, show_default=True)
@click.option('--trace-depth', type=int, default=5, show_default=True,
              help='Depth of the polygon written to CSV')
@click.pass_context
def counterex_curve(ctx: click.Context, depth: int, samples: int, trace_depth: int) -> int:
    """Cell visits, measure preservation, collisions and biLipschitz failure."""
    from .counterexamples import (bilip_failure_scan, cell_visit_check, collision_witness,
                                  curve_trace, measure_preservation_check,
                                  snowflake_box_dimension, snowflake_lipschitz)

    run: RunContext = ctx.obj
    witness = collision_witness(depth)
    grid = (np.arange(samples) + 0.5) / samples
    dim = snowflake_box_dimension(seed=run.seed)
    reports = [
        cell_visit_check(min(depth, 8)),
        measure_preservation_check(2, samples, run.seed),
        snowflake_lipschitz(pairs=samples, seed=run.seed),
        bilip_failure_scan(grid, seed=run.seed, witness=witness),
        AuditReport('snowflake_dimension', abs(dim.slope - 2.0) <= 0.1,
                    {'slope': dim.slope}, tables={'counts': dim.table()}),
    ]
    config = {'depth': depth, 'samples': samples, 'trace_depth': trace_depth}
    return _finish(ctx, 'counterex_curve', config, reports, {'witness': witness.to_dict()},
                   {'trace': curve_trace(trace_depth)})


@counterex_cmd.command('grushin')
@click.option('--budget', type=int, default=4, show_default=True)
@click.option('--height', 'heights', type=float, multiple=True, default=(0.01, 0.04, 0.16),
              show_default=True)
@click.option('--pairs', type=int, default=20_000, show_default=True)
@click.option('--epsilon', type=float, default=0.1, show_default=True)
@click.pass_context
def counterex_grushin(ctx: click.Context, budget: int, heights: Sequence[float], pairs: int,
                      epsilon: float) -> int:
    """Axis scaling, extension Lipschitz scan and nondecomposability."""
    from .counterexamples import (axis_ratio_profile, grushin_axis_constant,
                                  grushin_distance_estimate, grushin_lipschitz_scan,
                                  nondecomposability_audit)

    run: RunContext = ctx.obj
    constant = grushin_axis_constant(budget, run.seed, cache=run.cache())
    axis = axis_ratio_profile(heights, budget, run.seed)
    scan = grushin_lipschitz_scan(pairs, run.seed, epsilon)
    audit = nondecomposability_audit([], seed=run.seed)
    path = grushin_distance_estimate((0.0, 0.0), (0.0, max(heights)), budget, run.seed,
                                     workers=run.workers)
    config = {'budget': budget, 'heights': list(heights), 'pairs': pairs, 'epsilon': epsilon}
    return _finish(ctx, 'counterex_grushin', config, [axis, scan, audit],
                   {'axis_constant': constant, 'longest_axis_pair': path.to_dict()},
                   {'path': path.path_table()})


# ----------------------------------------------------------------------
# config
# ----------------------------------------------------------------------
@cli.group('config')
def config_cmd() -> None:
    """Persistent defaults in ~/.carnotlip/config."""


@config_cmd.command('set')
@click.argument('key')
@click.argument('value')
def config_set(key: str, value: str) -> int:
    """Save a default."""
    from .config import set_value
    try:
        set_value(key, value)
    except ValueError as e:
        raise click.UsageError(str(e))
    return 0


@config_cmd.command('show')
def config_show() -> int:
    """Display the resolved settings."""
    from .config import show_config
    show_config()
    return 0


@config_cmd.command('remove')
def config_remove() -> int:
    """Remove the config file."""
    from .config import remove_config
    remove_config()
    return 0


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI and return its exit code.

    Exit codes: 0 when every audit passes, 1 on an audit failure or a
    runtime error, 2 on usage errors (including invalid parameter values).
    """
    args = list(sys.argv[1:] if argv is None else argv)
    if not args:
        with click.Context(cli, info_name='carnotlip') as ctx:
            click.echo(ctx.get_help(), err=True)
        return 2
    try:
        code = cli.main(args=args, prog_name='carnotlip', standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 2
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except ValueError as e:
        click.echo(f"Error: {e}", err=True)
        return 2
    except Exception as e:
        logger.exception("Command failed")
        click.echo(f"Error: {e}", err=True)
        return 1
    return int(code or 0)


def main() -> None:
    """Console-script entry point."""
    sys.exit(run())


if __name__ == '__main__':
    main()
