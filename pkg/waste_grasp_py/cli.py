import asyncio
import logging
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import click
from dotenv import load_dotenv

from waste_grasp_py import __version__, constants
from waste_grasp_py.config_loader import load_base_config, validate_final_config
from waste_grasp_py.config_models import PipelineConfig
from waste_grasp_py.dataset_io import LabeledMask, load_predictions, resolve_detections
from waste_grasp_py.enums import PlyFormat, WasteClass
from waste_grasp_py.exceptions import InputError, PreconditionViolation
from waste_grasp_py.frame_io import FrameInputs, load_frame
from waste_grasp_py.logging_setup import configure_logging
from waste_grasp_py.pipeline_service import PipelineService

logger = logging.getLogger(__name__)

EXIT_INPUT_ERROR = 2
EXIT_INTERNAL_ERROR = 3

_frame_options = [
    click.option('--color', 'color_path', type=click.Path(dir_okay=False), required=True, help='8-bit RGB PNG of the frame.'),
    click.option('--depth', 'depth_path', type=click.Path(dir_okay=False), required=True, help='16-bit depth PNG registered to the color image.'),
    click.option('--intrinsics', 'intrinsics_path', type=click.Path(dir_okay=False), required=True, help='Intrinsics JSON sidecar.'),
    click.option('--predictions', 'predictions_path', type=click.Path(dir_okay=False), required=True, help='Predictions JSON with one mask per detected object.'),
    click.option('--image-id', help='Only use predictions for this image id.'),
]

_override_options = [
    click.option('--output-dir', 'output_dir_override', help='Directory for written results.'),
    click.option('--jobs', 'jobs_override', type=click.IntRange(min=1), help='Worker threads per frame (default: logical cores).'),
]


def _apply(options) -> Callable:
    def decorator(f):
        for option in reversed(options):
            f = option(f)
        return f
    return decorator


def _run_guarded(action: Callable[[], Optional[int]]) -> None:
    """Runs a command body and maps failures onto exit codes."""
    ctx = click.get_current_context()
    try:
        code = action()
    except InputError as e:
        click.echo(click.style(f"❌ {type(e).__name__}: {e}", fg="red"), err=True)
        ctx.exit(EXIT_INPUT_ERROR)
    except Exception as e:
        logger.debug("internal error", exc_info=True)
        click.echo(click.style(f"❌ Internal error ({type(e).__name__}): {e}", fg="red"), err=True)
        ctx.exit(EXIT_INTERNAL_ERROR)
    else:
        ctx.exit(code or 0)


def _final_config(ctx, output_dir_override: Optional[str] = None, jobs_override: Optional[int] = None) -> PipelineConfig:
    final_config: PipelineConfig = ctx.obj['base_config'].model_copy(deep=True)
    if output_dir_override is not None:
        final_config.output_dir = output_dir_override
    if jobs_override is not None:
        final_config.jobs = jobs_override
    validate_final_config(final_config)
    return final_config


def _load_frame_inputs(
    color_path: str,
    depth_path: str,
    intrinsics_path: str,
    predictions_path: str,
    image_id: Optional[str],
) -> Tuple[FrameInputs, List[LabeledMask], Optional[str]]:
    frame = load_frame(color_path, depth_path, intrinsics_path)
    records = load_predictions(predictions_path)
    if image_id is not None:
        records = [record for record in records if record.image_id == image_id]
    image_ids = sorted({record.image_id for record in records})
    if len(image_ids) > 1:
        raise PreconditionViolation(
            f"Predictions cover {len(image_ids)} images ({', '.join(image_ids)}); select one with --image-id"
        )
    detections = resolve_detections(records, Path(predictions_path).parent)
    return frame, detections, image_id or (image_ids[0] if image_ids else None)


@click.group(context_settings=dict(help_option_names=['-h', '--help']))
@click.option('--config', 'config_file_path', type=click.Path(dir_okay=False), help=f'Path to config file (overrides ${constants.CONFIG_ENV_VAR}).')
@click.option('-v', '--verbose', is_flag=True, help='Log debug details and per-stage timings.')
@click.version_option(__version__, package_name="waste-grasp-py")
@click.pass_context
def cli(ctx, config_file_path: Optional[str], verbose: bool):
    """Grasp synthesis for waste objects from RGBD frames and instance masks."""
    load_dotenv()
    configure_logging(verbose)
    ctx.ensure_object(dict)
    try:
        ctx.obj['base_config'] = load_base_config(config_file_path)
    except InputError as e:
        click.echo(click.style(f"❌ {e}", fg="red"), err=True)
        ctx.exit(EXIT_INPUT_ERROR)


@cli.command()
@_apply(_frame_options)
@click.option('--format', 'ply_format', type=click.Choice([f.value for f in PlyFormat]), default=PlyFormat.ASCII.value, show_default=True, help='PLY encoding.')
@_apply(_override_options)
@click.pass_context
def reconstruct(ctx, color_path, depth_path, intrinsics_path, predictions_path, image_id, ply_format, output_dir_override, jobs_override):
    """Back-project each predicted mask and write the conditioned object clouds as PLY."""
    def action():
        config = _final_config(ctx, output_dir_override, jobs_override)
        frame, detections, frame_id = _load_frame_inputs(color_path, depth_path, intrinsics_path, predictions_path, image_id)
        service = PipelineService(config)
        service.reconstruct_objects(frame, detections, prefix=frame_id or "object", fmt=PlyFormat(ply_format))
    _run_guarded(action)


@cli.command()
@_apply(_frame_options)
@click.option('--output', 'output_path', type=click.Path(dir_okay=False), help='FrameResult JSON path (default: <output-dir>/<image-id>_grasps.json).')
@_apply(_override_options)
@click.pass_context
def grasp(ctx, color_path, depth_path, intrinsics_path, predictions_path, image_id, output_path, output_dir_override, jobs_override):
    """Run the full per-frame pipeline and write a FrameResult JSON."""
    def action():
        config = _final_config(ctx, output_dir_override, jobs_override)
        frame, detections, frame_id = _load_frame_inputs(color_path, depth_path, intrinsics_path, predictions_path, image_id)
        service = PipelineService(config)
        result = asyncio.run(service.run_pipeline(frame, detections, frame_id))
        service.display_frame_result(result)
        path = service.write_frame_result(result, Path(output_path) if output_path else None)
        service.console.print(f"💾 Frame result saved to: [green]{path}[/green]")
    _run_guarded(action)


@cli.command()
@click.option('--predictions', 'predictions_path', type=click.Path(dir_okay=False), required=True, help='Predictions JSON.')
@click.option('--manifest', 'manifest_path', type=click.Path(dir_okay=False), required=True, help='Dataset manifest with ground truth.')
@click.option('--by-environment', is_flag=True, help='Also report indoor and outdoor subsets separately.')
@click.option('--max-detections', type=click.IntRange(min=0), help='Per-image, per-class detection cap (0 disables it).')
@click.option('--output', 'output_path', type=click.Path(dir_okay=False), help='EvalReport JSON path (default: <output-dir>/eval_report.json).')
@_apply(_override_options)
@click.pass_context
def evaluate(ctx, predictions_path, manifest_path, by_environment, max_detections, output_path, output_dir_override, jobs_override):
    """Mask AP of predictions against the manifest's ground truth."""
    def action():
        config = _final_config(ctx, output_dir_override, jobs_override)
        if max_detections is not None:
            config.evaluation.max_detections = max_detections or None
        service = PipelineService(config)
        service.evaluate(predictions_path, manifest_path, by_environment, Path(output_path) if output_path else None)
    _run_guarded(action)


@cli.command(name="validate-dataset")
@click.argument('manifest_path', type=click.Path(dir_okay=False))
@click.option('--balance-ratio', type=click.FloatRange(min=1.0), help='Max/min per-class count ratio tolerated before warning.')
@click.pass_context
def validate_dataset(ctx, manifest_path, balance_ratio):
    """Check a dataset manifest: referenced files, dimensions, masks and class balance."""
    def action():
        config = _final_config(ctx)
        if balance_ratio is not None:
            config.dataset.balance_ratio = balance_ratio
        report = PipelineService(config).validate_dataset(manifest_path)
        return 0 if report.valid else EXIT_INPUT_ERROR
    _run_guarded(action)


@cli.command(name="export-ply")
@click.argument('ply_path', type=click.Path(dir_okay=False))
@click.option('--output', 'output_path', type=click.Path(dir_okay=False), help='Marker PLY path (default: <output-dir>/<name>_grasp.ply).')
@click.option('--class', 'object_class', help='Object class id or name recorded in the report.')
@click.option('--format', 'ply_format', type=click.Choice([f.value for f in PlyFormat]), default=PlyFormat.ASCII.value, show_default=True, help='PLY encoding.')
@click.option('--output-dir', 'output_dir_override', help='Directory for written results.')
@click.pass_context
def export_ply(ctx, ply_path, output_path, object_class, ply_format, output_dir_override):
    """Compute the best grasp of an object cloud and export it with contact and plane markers."""
    def action():
        config = _final_config(ctx, output_dir_override)
        label = None
        if object_class is not None:
            try:
                label = WasteClass.parse(object_class)
            except ValueError as e:
                raise PreconditionViolation(str(e)) from e
        target = Path(output_path) if output_path else Path(config.output_dir) / f"{Path(ply_path).stem}_grasp.ply"
        PipelineService(config).export_markers(ply_path, target, label, PlyFormat(ply_format))
    _run_guarded(action)


@cli.group(name="config")
@click.pass_context
def config_group(ctx):
    """Manage the global configuration file."""
    pass


@config_group.command(name="set")
@click.argument('key', type=str)
@click.argument('value', type=str)
@click.pass_context
def set_config_value(ctx, key: str, value: str):
    """Sets a configuration value in the global config file.

    KEY: a dotted configuration key (e.g. 'voxel_size', 'gripper.max_opening').
    VALUE: a JSON value (numbers, null, lists) or a plain string.
    """
    def action():
        PipelineService(ctx.obj['base_config']).set_global_config_value(key, value)
    _run_guarded(action)


@config_group.command(name="show")
@click.pass_context
def show_config(ctx):
    """Shows the path and content of the global configuration file."""
    config_file = constants.GLOBAL_CONFIG_FILE
    click.echo(f"Global configuration file is expected at: {config_file}")
    if config_file.exists():
        try:
            content = config_file.read_text(encoding="utf-8")
            click.echo("\nCurrent content:")
            click.echo(content)
        except OSError as e:
            click.echo(click.style(f"Could not read global config file: {e}", fg="red"))
    else:
        click.echo("Global configuration file does not exist yet.")
        click.echo("You can create it and set values using: waste-grasp config set <KEY> <VALUE>")


if __name__ == '__main__':
    cli()
