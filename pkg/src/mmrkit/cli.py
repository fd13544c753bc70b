"""Command-line entry point orchestrating the whole pipeline.

Subcommands cover ingest -> generate -> synthesize -> screen -> serve-review
-> filter -> assemble -> stats -> eval, plus curate-queries and
validate-released. Every subcommand can read defaults from a JSON config
file (flags win), is re-runnable (same inputs and seeds give identical
outputs), and writes a provenance manifest next to its outputs. Exit codes
classify failures: 2 parse, 3 validation, 4 network, 5 missing replay
fixture. The API key is only ever read from the environment.
"""

from __future__ import annotations

import functools
import hashlib
import json
import sys
from pathlib import Path

import click

from . import __version__
from . import curation, dataset as ds, evaluation, gateway, prompts, synthesis
from .annotations import load_annotations, validate_index
from .errors import FixtureMissError, NetworkError, ParseError, ValidationError

EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NETWORK = 4
EXIT_FIXTURE = 5

# Reference totals for the public MMR release, used by validate-released.
PUBLISHED_COUNTS = {
    "qa_pairs": 194_398,
    "images": 57_643,
    "train_pairs": 154_127,
    "val_pairs": 8_194,
    "test_pairs": 32_077,
    "max_targets": 16,
    "mean_targets": 1.8,
    "object_expressions": 114_704,
    "part_expressions": 226_869,
}


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ParseError as exc:
            _fail(EXIT_PARSE, str(exc))
        except FixtureMissError as exc:
            _fail(EXIT_FIXTURE, str(exc))
        except NetworkError as exc:
            _fail(EXIT_NETWORK, str(exc))
        except (ValidationError, ValueError, FileNotFoundError) as exc:
            _fail(EXIT_VALIDATION, str(exc))

    return wrapper


def _merge_config(ctx: click.Context, **flags) -> dict:
    """Config-file values fill in flags the user did not set."""
    cfg = dict(ctx.obj.get("config", {}))
    merged = {}
    for key, value in flags.items():
        source = ctx.get_parameter_source(key)
        if source == click.core.ParameterSource.DEFAULT and key in cfg:
            merged[key] = cfg[key]
        else:
            merged[key] = value
    return merged


def _write_manifest(out_path: Path, subcommand: str, params: dict, inputs: dict) -> None:
    config_hash = hashlib.sha256(
        json.dumps(params, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()
    manifest = {
        "tool": "mmr",
        "version": __version__,
        "subcommand": subcommand,
        "params": {k: str(v) if isinstance(v, Path) else v for k, v in params.items()},
        "config_hash": config_hash,
        "inputs": {k: str(v) for k, v in inputs.items()},
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON config file; flags override its values.")
@click.pass_context
def main(ctx, config_path):
    """Dataset construction and evaluation toolchain for multi-target,
    object- and part-level reasoning segmentation."""
    ctx.ensure_object(dict)
    if config_path:
        try:
            ctx.obj["config"] = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            _fail(EXIT_PARSE, f"config file {config_path}: {exc}")
    else:
        ctx.obj["config"] = {}


@main.command()
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--lenient", is_flag=True, help="Skip and log invalid records instead of aborting.")
@click.option("--part-link-key", default="obj_ann_id", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the index summary and validation report as JSON.")
@click.pass_context
@handle_errors
def ingest(ctx, annotations_path, lenient, part_link_key, out_path):
    """Load and validate a COCO-style annotation file."""
    opts = _merge_config(ctx, lenient=lenient, part_link_key=part_link_key)
    index = load_annotations(annotations_path, lenient=opts["lenient"], part_link_key=opts["part_link_key"])
    report = validate_index(index)
    counts = index.counts()
    for key, value in counts.items():
        click.echo(f"{key}: {value}")
    click.echo(f"validation: {len(report.errors)} errors, {len(report.warnings)} warnings")
    if out_path:
        doc = {"counts": counts, "validation": report.to_dict()}
        Path(out_path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
        _write_manifest(Path(out_path), "ingest", opts, {"annotations": annotations_path})
    if report.errors and not opts["lenient"]:
        sys.exit(EXIT_VALIDATION)


@main.command()
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--backend", type=click.Choice(["live", "record", "replay"]), default="replay",
              show_default=True)
@click.option("--fixtures", "fixture_dir", type=click.Path(), default=None,
              help="Fixture directory for record/replay backends.")
@click.option("--images", "n_images", type=int, default=None, help="Generate for the first N images.")
@click.option("--image-ids", default=None, help="Comma-separated explicit image ids.")
@click.option("--variant", type=click.Choice(list(prompts.VARIANTS)), default="general", show_default=True)
@click.option("--templates", "template_dir", type=click.Path(exists=True), default=None)
@click.option("--model", "model_name", default="gpt-4-vision-preview", show_default=True)
@click.option("--temperature", type=float, default=0.7, show_default=True)
@click.option("--max-tokens", type=int, default=850, show_default=True)
@click.option("--endpoint-url", default="https://api.openai.com/v1/chat/completions", show_default=True)
@click.option("--single-step", is_flag=True, help="One combined caption+QA request per image.")
@click.option("--images-root", type=click.Path(), default=None)
@click.option("--cost-log", type=click.Path(), default=None)
@click.pass_context
@handle_errors
def generate(ctx, annotations_path, out_path, backend, fixture_dir, n_images, image_ids,
             variant, template_dir, model_name, temperature, max_tokens, endpoint_url,
             single_step, images_root, cost_log):
    """Run caption + QA generation and write raw generation records."""
    opts = _merge_config(
        ctx, backend=backend, fixture_dir=fixture_dir, n_images=n_images, image_ids=image_ids,
        variant=variant, template_dir=template_dir, model_name=model_name, temperature=temperature,
        max_tokens=max_tokens, endpoint_url=endpoint_url, single_step=single_step,
        images_root=images_root, cost_log=cost_log,
    )
    index = load_annotations(annotations_path)
    config = gateway.GenConfig(
        model_name=opts["model_name"],
        temperature=opts["temperature"],
        max_tokens=opts["max_tokens"],
        endpoint_url=opts["endpoint_url"],
        backend=opts["backend"],
        fixture_dir=opts["fixture_dir"],
        image_root=opts["images_root"],
        cost_log_path=opts["cost_log"],
        two_step=not opts["single_step"],
    )
    template_set = prompts.TemplateSet(opts["template_dir"]) if opts["template_dir"] else None
    gw = gateway.LlmGateway(config)

    selected = sorted(index.images)
    if opts["image_ids"]:
        wanted = [int(v) for v in str(opts["image_ids"]).split(",")]
        selected = [i for i in selected if i in set(wanted)]
    if opts["n_images"] is not None:
        selected = selected[: opts["n_images"]]

    records = []
    for image_id in selected:
        caption, resp = gateway.generate_two_step(
            index, image_id, opts["variant"], config, template_set, gateway=gw
        )
        records.append(
            synthesis.GenerationRecord(
                image_id=image_id,
                caption=caption,
                raw_text=resp.response_text,
                parse_status="raw",
                qa_pairs=(),
                provenance=resp.request_hash,
            )
        )
    synthesis.write_records(records, out_path)
    _write_manifest(Path(out_path), "generate", opts, {"annotations": annotations_path})
    click.echo(f"wrote {len(records)} generation records to {out_path}")


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
@handle_errors
def synthesize(ctx, records_path, annotations_path, out_path):
    """Parse raw generation output into bound QA pairs with [SEG] markers."""
    index = load_annotations(annotations_path)
    raw_records = synthesis.read_records(records_path)
    out_records = []
    for record in raw_records:
        out_records.append(
            synthesis.synthesize_record(
                index, record.image_id, record.caption, record.raw_text,
                provenance=record.provenance,
            )
        )
    synthesis.write_records(out_records, out_path)
    _write_manifest(Path(out_path), "synthesize", {}, {
        "records": records_path, "annotations": annotations_path,
    })
    n_qa = sum(len(r.qa_pairs) for r in out_records)
    by_status = {}
    for r in out_records:
        by_status[r.parse_status] = by_status.get(r.parse_status, 0) + 1
    click.echo(f"synthesized {n_qa} QA pairs from {len(out_records)} records ({by_status})")


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
@handle_errors
def screen(ctx, records_path, annotations_path, out_path):
    """Run automatic rule screening; writes one violation per line."""
    index = load_annotations(annotations_path)
    records = synthesis.read_records(records_path)
    violations = []
    for record in records:
        for qa in record.qa_pairs:
            violations.extend(curation.auto_screen(qa, index))
    with open(out_path, "w", encoding="utf-8") as fh:
        for violation in violations:
            fh.write(json.dumps(violation.to_dict(), sort_keys=True) + "\n")
    _write_manifest(Path(out_path), "screen", {}, {
        "records": records_path, "annotations": annotations_path,
    })
    by_rule = {}
    for v in violations:
        by_rule[v.rule] = by_rule.get(v.rule, 0) + 1
    click.echo(f"{len(violations)} violations ({by_rule})")


@main.command("serve-review")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--verdicts", "verdicts_path", required=True, type=click.Path())
@click.option("--inspectors", required=True, help="Comma-separated inspector ids.")
@click.option("--images-root", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8800, show_default=True)
@click.option("--ui-dir", type=click.Path(exists=True), default=None,
              help="Serve a built browser client from this directory.")
@click.pass_context
@handle_errors
def serve_review(ctx, records_path, annotations_path, verdicts_path, inspectors,
                 images_root, host, port, ui_dir):
    """Serve the inspector review API (and UI if built)."""
    from .review import ReviewSession, serve

    index = load_annotations(annotations_path)
    records = synthesis.read_records(records_path)
    qas = [qa for r in records for qa in r.qa_pairs]
    session = ReviewSession(
        qas=qas,
        index=index,
        store=curation.VerdictStore(verdicts_path),
        inspectors=tuple(i.strip() for i in inspectors.split(",") if i.strip()),
        images_root=Path(images_root) if images_root else None,
    )
    click.echo(f"serving {len(qas)} QA pairs for review on {host}:{port}")
    serve(session, host=host, port=port, ui_dir=ui_dir)


@main.command("filter")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--verdicts", "verdicts_path", required=True, type=click.Path(exists=True))
@click.option("--annotations", "annotations_path", type=click.Path(exists=True), default=None,
              help="Needed for strict mode's automatic screening.")
@click.option("--mode", type=click.Choice(["paper", "strict"]), default="paper", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.pass_context
@handle_errors
def filter_cmd(ctx, records_path, verdicts_path, annotations_path, mode, out_path, report_path):
    """Remove QA pairs flagged by two or more distinct inspectors."""
    opts = _merge_config(ctx, mode=mode)
    records = synthesis.read_records(records_path)
    store = curation.VerdictStore(verdicts_path)
    auto_violations = None
    if opts["mode"] == "strict":
        index = load_annotations(annotations_path) if annotations_path else None
        auto_violations = {}
        for record in records:
            for qa in record.qa_pairs:
                auto_violations[qa.qa_id] = curation.auto_screen(qa, index)
    all_qas = [qa for r in records for qa in r.qa_pairs]
    retained, report = curation.apply_filter(
        all_qas, store, opts["mode"], auto_violations=auto_violations
    )
    retained_ids = {qa.qa_id for qa in retained}
    corrected = {qa.qa_id: qa for qa in retained}
    out_records = []
    for record in records:
        kept = tuple(corrected[qa.qa_id] for qa in record.qa_pairs if qa.qa_id in retained_ids)
        out_records.append(
            synthesis.GenerationRecord(
                image_id=record.image_id,
                caption=record.caption,
                raw_text=record.raw_text,
                parse_status=record.parse_status,
                qa_pairs=kept,
                provenance=record.provenance,
            )
        )
    synthesis.write_records(out_records, out_path)
    _write_manifest(Path(out_path), "filter", opts, {
        "records": records_path, "verdicts": verdicts_path,
    })
    click.echo(
        f"kept {report.retained}/{report.total_in} QA pairs "
        f"(removed {report.removed}, rate {report.removal_rate:.3f})"
    )
    if report_path:
        Path(report_path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", "out_dir", required=True, type=click.Path())
@click.option("--ratios", default="0.79,0.04,0.17", show_default=True,
              help="train,val,test split ratios (must sum to 1).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_context
@handle_errors
def assemble(ctx, records_path, annotations_path, out_dir, ratios, seed):
    """Assemble retained QA pairs into split documents with embedded masks."""
    opts = _merge_config(ctx, ratios=ratios, seed=seed)
    ratio_tuple = tuple(float(v) for v in str(opts["ratios"]).split(","))
    if len(ratio_tuple) != 3:
        raise ValidationError(f"expected 3 ratios, got {len(ratio_tuple)}")
    index = load_annotations(annotations_path)
    records = synthesis.read_records(records_path)
    built = ds.records_to_dataset(records, index, ratio_tuple, opts["seed"])
    written = ds.write_mmr(built, out_dir)
    _write_manifest(Path(out_dir) / "dataset", "assemble", opts, {
        "records": records_path, "annotations": annotations_path,
    })
    totals = built.split_totals()
    click.echo(f"wrote {len(written)} split documents to {out_dir} ({totals})")


@main.command()
@click.option("--dataset-dir", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--json", "json_path", type=click.Path(), default=None)
@click.option("--hist-dir", type=click.Path(), default=None,
              help="Export histogram CSVs for external plotting.")
@click.pass_context
@handle_errors
def stats(ctx, dataset_dir, json_path, hist_dir):
    """Compute dataset statistics from split documents."""
    built = ds.read_mmr(dataset_dir)
    report = ds.compute_stats(built)
    click.echo(report.format_table())
    if json_path:
        Path(json_path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )
        _write_manifest(Path(json_path), "stats", {}, {"dataset_dir": dataset_dir})
    if hist_dir:
        ds.export_histograms(report, hist_dir)


@main.command("eval")
@click.option("--dataset-dir", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True)
@click.option("--subset", type=click.Choice(list(ds.TEST_SUBSETS)), default=None,
              help="Score one subset view; omit for the union of the split.")
@click.option("--all-subsets", is_flag=True, help="Score the union plus every subset view.")
@click.option("--giou-mode", type=click.Choice(["per_sample", "per_target"]),
              default="per_sample", show_default=True)
@click.option("--json", "json_path", type=click.Path(), default=None)
@click.pass_context
@handle_errors
def eval_cmd(ctx, dataset_dir, preds_path, split, subset, all_subsets, giou_mode, json_path):
    """Score a prediction file with gIoU and cIoU."""
    from .metrics import format_report_table

    opts = _merge_config(ctx, split=split, subset=subset, giou_mode=giou_mode)
    built = ds.read_mmr(dataset_dir)
    preds = evaluation.read_predictions(preds_path)
    selections = [(opts["split"], opts["subset"])]
    if all_subsets:
        selections = [(opts["split"], None)] + [(opts["split"], s) for s in ds.TEST_SUBSETS]
    reports = []
    for sel_split, sel_subset in selections:
        selected_ids = set(evaluation.select_qas(built, sel_split, sel_subset))
        if not selected_ids:
            continue
        subset_preds = [p for p in preds if p.qa_id in selected_ids]
        reports.append(
            evaluation.align_and_score(
                subset_preds, built, split=sel_split, subset=sel_subset,
                giou_mode=opts["giou_mode"],
            )
        )
    click.echo(format_report_table(reports))
    if json_path:
        Path(json_path).write_text(
            json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True),
            encoding="utf-8",
        )
        _write_manifest(Path(json_path), "eval", opts, {
            "dataset_dir": dataset_dir, "preds": preds_path,
        })


@main.command("curate-queries")
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--k-min", type=int, default=4, show_default=True)
@click.option("--k-max", type=int, default=6, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--template", default=evaluation.DEFAULT_QUERY_TEMPLATE, show_default=True)
@click.pass_context
@handle_errors
def curate_queries(ctx, annotations_path, out_path, k_min, k_max, seed, template):
    """Build multi-target referring queries from object annotations."""
    opts = _merge_config(ctx, k_min=k_min, k_max=k_max, seed=seed, template=template)
    index = load_annotations(annotations_path)
    queries = evaluation.curate_multitarget_queries(
        index, (opts["k_min"], opts["k_max"]), opts["seed"], opts["template"]
    )
    with open(out_path, "w", encoding="utf-8") as fh:
        for query in queries:
            fh.write(json.dumps(query.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    _write_manifest(Path(out_path), "curate-queries", opts, {"annotations": annotations_path})
    click.echo(f"wrote {len(queries)} queries to {out_path}")


@main.command("validate-released")
@click.option("--dir", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--tolerance", type=float, default=0.01, show_default=True,
              help="Relative tolerance for count comparisons.")
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.pass_context
@handle_errors
def validate_released(ctx, dataset_dir, tolerance, report_path):
    """Recompute release counts and diff them against the published values."""
    built = ds.read_mmr(dataset_dir)
    stats_report = ds.compute_stats(built)
    totals = built.split_totals()
    actual = {
        "qa_pairs": stats_report.n_qa,
        "images": stats_report.n_images,
        "train_pairs": totals.get("train", 0),
        "val_pairs": totals.get("val", 0),
        "test_pairs": totals.get("test", 0),
        "max_targets": stats_report.max_targets,
        "mean_targets": stats_report.mean_targets,
        "object_expressions": stats_report.object_expressions,
        "part_expressions": stats_report.part_expressions,
    }
    discrepancies = {}
    click.echo(f"{'field':<22} {'expected':>12} {'actual':>12}")
    for field, expected in PUBLISHED_COUNTS.items():
        got = actual[field]
        click.echo(f"{field:<22} {expected:>12} {got:>12}")
        if field == "mean_targets":
            ok = abs(got - expected) <= 0.05
        else:
            ok = abs(got - expected) <= tolerance * expected
        if not ok:
            discrepancies[field] = {"expected": expected, "actual": got}
    doc = {"actual": actual, "expected": PUBLISHED_COUNTS, "discrepancies": discrepancies}
    if report_path:
        Path(report_path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    if discrepancies:
        click.echo(f"DISCREPANCIES in fields: {', '.join(sorted(discrepancies))}", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo("all counts within tolerance")


if __name__ == "__main__":
    main()
