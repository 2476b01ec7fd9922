"""
lifshitz-arena コマンドラインアプリケーション

引数の解析結果を幾何・ダイナミクス・検証・キャンペーンの各ロジックへ振り分ける
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError

from config.logging import LoggingConfig
from config.settings import RESULTS_DIR
from core.errors import ArenaError, VerificationError
from core.logic.coupling import censoring_trials, first_layer_check, ordered_coupling_trials, slice_decoupling_check
from core.logic.estimators import estimate_all, fit_scaling, linear_lower_sanity
from core.logic.experiments import campaign_paths, envelope_check, run_campaign, simulate, summarize_campaign
from core.logic.geometry import geometry_report
from core.models.enums import BoundaryPreset, Engine, FitModel, GeometryPreset, LogBase
from core.models.lattice import GeometryParams
from core.services.persistence import read_records_csv, write_json, write_plot_file
from core.ui.command_parser import parse_command, version_info
from core.ui.output_display import render_error, render_json, render_version, replica_progress
from utils.config_file import load_campaign_config


# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()


def resolved_args(args: argparse.Namespace) -> Dict[str, Any]:
    """出力に埋め込む解決済みの引数"""
    echo = {}
    for key, value in sorted(vars(args).items()):
        echo[key] = str(value) if isinstance(value, Path) else value
    return echo


def args_hash(config: Dict[str, Any]) -> str:
    """解決済みの引数の SHA-256（先頭 16 桁）"""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def artifact_seed(args: argparse.Namespace, result: Dict[str, Any]) -> Optional[Any]:
    """出力に埋め込むシード（乱数を使わないコマンドでは None）"""
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "campaign" in result:
        return result["campaign"]["seed"]
    if "source" in result:
        return result["source"].get("seed")
    return None


def output_document(args: argparse.Namespace, body: Dict[str, Any], seed: Optional[Any] = None) -> Dict[str, Any]:
    """標準出力の JSON に設定ハッシュとシードを付ける"""
    config = resolved_args(args)
    return {"command": args.command, "config": config, "config_hash": args_hash(config), "seed": seed, **body}


def geometry_params(args: argparse.Namespace) -> GeometryParams:
    return GeometryParams(L=args.L, d=args.d, c2=args.c2, log_base=LogBase(args.log_base))


def cmd_simulate(args: argparse.Namespace) -> Dict[str, Any]:
    """simulate: 1 本の軌道の到達時間"""
    return simulate(
        geometry_params(args),
        geometry=GeometryPreset(args.geometry),
        boundary=BoundaryPreset(args.boundary) if args.boundary else None,
        engine=Engine(args.engine),
        seed=args.seed,
        replica=args.replica,
        tcap=args.tcap,
        start=args.start,
        filter_kind=args.filter,
        layer_power=args.layer_power,
        protect_index=args.protect_index,
        i=args.i,
        r=args.r,
        l=args.l,
        record_wall_time=args.record_wall_time,
    )


def cmd_campaign(args: argparse.Namespace) -> Dict[str, Any]:
    """campaign: 設定ファイルのキャンペーンを実行して要約を返す"""
    cfg = load_campaign_config(args.config)
    out_dir = args.out or RESULTS_DIR
    with replica_progress(len(cfg.Ls) * cfg.replicas, cfg.name) as advance:
        records = run_campaign(cfg, out_dir, args.jobs, on_record=advance)
    paths = campaign_paths(cfg, out_dir)
    return {
        "campaign": cfg.canonical(),
        "files": {"csv": str(paths["csv"]), "summary": str(paths["summary"])},
        "summary": summarize_campaign(cfg, records),
    }


def cmd_couple_check(args: argparse.Namespace) -> Dict[str, Any]:
    """couple-check: 順序保存または検閲付きダイナミクスとの比較"""
    if args.censor:
        return censoring_trials(args.d, args.L, args.runs, args.seed, args.t_max)
    return ordered_coupling_trials(args.d, args.L, args.runs, args.seed, args.t_max, args.inject_order_fault)


def cmd_slice_check(args: argparse.Namespace) -> Dict[str, Any]:
    """slice-check: スラブとスライスごとのシェルの照合"""
    gp = geometry_params(args)
    if args.first_layer:
        report = first_layer_check(gp, args.t_max, args.seed, args.min_events)
        return {"first_layer": report.to_dict()}
    indices = args.i or [0]
    return {"slices": [slice_decoupling_check(gp, i, args.t_max, args.seed, args.min_events).to_dict()
                       for i in indices]}


def cmd_geometry(args: argparse.Namespace) -> Dict[str, Any]:
    """geometry: 濃度と境界分解の検証"""
    return geometry_report(geometry_params(args), args.check_bdecop, args.i)


def cmd_fit(args: argparse.Namespace) -> Dict[str, Any]:
    """fit: CSV から T_mix と指数を推定する"""
    records, meta = read_records_csv(args.input)
    estimates = estimate_all(records, min_samples=args.min_samples)
    fit = fit_scaling(list(estimates.values()), FitModel(args.model), args.polylog_power)
    result: Dict[str, Any] = {
        "source": meta,
        "tmix": {str(L): e.to_dict() for L, e in estimates.items()},
        "fit": fit.to_dict(),
    }
    try:
        result["lower_bound"] = linear_lower_sanity(records).to_dict()
    except ArenaError as e:
        logger.debug(f"下界の確認を省略しました: {e}")
        result["lower_bound"] = None
    if args.emit_plot:
        write_plot_file(args.emit_plot, estimates.values(), meta.get("config_hash"), meta.get("seed"))
        result["plot"] = str(args.emit_plot)
    return result


def cmd_envelope(args: argparse.Namespace) -> Dict[str, Any]:
    """envelope: 縮小集合への包含の違反率"""
    cfg = load_campaign_config(args.config)
    reports = envelope_check(cfg, args.jobs)
    result = {"campaign": cfg.canonical(), "config_hash": cfg.config_hash(),
              "envelope": [r.to_dict() for r in reports]}
    if args.out:
        write_json(args.out, result)
    return result


COMMANDS: Dict[str, Callable[[argparse.Namespace], Dict[str, Any]]] = {
    "simulate": cmd_simulate,
    "campaign": cmd_campaign,
    "couple-check": cmd_couple_check,
    "slice-check": cmd_slice_check,
    "geometry": cmd_geometry,
    "fit": cmd_fit,
    "envelope": cmd_envelope,
}


def dispatch(argv: Optional[List[str]] = None) -> int:
    """引数を解析してサブコマンドを実行し、終了コードを返す

    0 は成功、1 は使い方や入力の誤り、2 は検証の違反、3 はデータ不足。

    Args:
        argv: 引数（省略時は sys.argv[1:]）

    Returns:
        終了コード
    """
    args = None
    try:
        args = parse_command(argv)
        LoggingConfig.configure(args.log_level)
        if args.version:
            info = version_info()
            render_version(info)
            render_json(info)
            return 0
        result = COMMANDS[args.command](args)
        render_json(output_document(args, {"result": result}, artifact_seed(args, result)))
        return 0
    except VerificationError as e:
        logger.error(f"検証に失敗しました: {e}")
        render_error(str(e), e.witness)
        body = {"error": str(e), "witness": e.witness}
        render_json(output_document(args, body, getattr(args, "seed", None)) if args else body)
        return e.exit_code
    except ValidationError as e:
        render_error(f"設定が不正です: {e}")
        return 1
    except ArenaError as e:
        render_error(str(e))
        return e.exit_code


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
