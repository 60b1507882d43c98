"""End-to-end co-segmentation run and single-stage execution from dumps."""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .crf import Labeling, build_crf, dump_model, evaluate_energy, load_model, solve_trws
from .features import co_saliency
from .harness import EvalReport, Manifest, evaluate_iou, read_masks, render_overlay, write_masks
from .proposals import ProposalParams, generate_proposals, read_proposals, score_proposals, write_proposals
from .refine import RefineParams, refine_streams
from .streams import (WarpCache, WarpParams, build_streams, cluster_count, expand_proposals,
                      merge_streams, read_streams, write_streams)
from .tcs import SuperpixelMap, compute_tcs
from .vidcore import rgb_to_lab, video_flows

STAGES = ("flow", "tcs", "proposals", "expand", "streams", "crf", "refine", "eval")


class StageError(RuntimeError):
    def __init__(self, stage, video_id, cause):
        where = f" (video {video_id})" if video_id else ""
        super().__init__(f"stage {stage}{where}: {cause}")
        self.stage, self.video_id, self.cause = stage, video_id, cause


@contextmanager
def _stage(name, video_id=None):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, video_id, exc) from exc


class Pipeline:
    """Stage implementations sharing one configuration."""

    def __init__(self, cfg=None, threads=None):
        self.cfg = cfg or PipelineConfig()
        n = threads if threads is not None else self.cfg.threads
        self.threads = n if n and n > 0 else (os.cpu_count() or 1)

    def map(self, fn, items):
        items = list(items)
        if self.threads <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(min(self.threads, len(items))) as ex:
            return list(ex.map(fn, items))

    # -- stages ------------------------------------------------------------
    def flow(self, video):
        c = self.cfg
        with _stage("flow", video.id):
            return video_flows(video, c.flow_levels, c.flow_iters, c.flow_smoothness)

    def tcs(self, video, forward):
        c = self.cfg
        with _stage("tcs", video.id):
            return compute_tcs(video, forward, c.tcs_count, c.tcs_compactness, c.tcs_iters,
                               c.tcs_color_gate)

    def saliency(self, videos):
        with _stage("saliency"):
            return co_saliency(videos, self.cfg.saliency_clusters, seed=self.cfg.seed)

    def proposal_params(self):
        c = self.cfg
        return ProposalParams(ring_width=c.ring_width, boundary_weight=c.boundary_weight,
                              contrast_weight=c.contrast_weight, dedup_iou=c.dedup_iou)

    def proposals(self, video, spm, flows):
        with _stage("proposals", video.id):
            params = self.proposal_params()
            raw = [generate_proposals(video.frames[t], spm, t, self.cfg.max_proposals_per_frame,
                                      video.id, params) for t in range(video.n_frames)]
            return score_proposals(raw, flows, self.cfg.surround_dilation)

    def warp_cache(self, video, spm):
        c = self.cfg
        params = WarpParams(refine=c.warp_refine, margin=c.warp_margin, smoothness=c.warp_smoothness)
        return WarpCache(spm, rgb_to_lab(video.frames), params)

    def expand(self, video, spm, flows, scored, mean_chi2, warp):
        with _stage("expand", video.id):
            return expand_proposals(scored, spm, self.cfg.gamma, video, flows, mean_chi2, warp,
                                    self.cfg.surround_dilation)

    def streams(self, video, spm, expanded, warp):
        c = self.cfg
        with _stage("streams", video.id):
            raw = build_streams(expanded, spm, c.x_init, c.x_grow, c.gamma, warp, video.id)
            n_inc = sum(1 for s in raw if not s.complete and len(s) > 1)
            y = cluster_count(n_inc, c.y_large, c.y_small, c.y_cutoff)
            return raw, merge_streams(raw, y, seed=c.seed, selection=c.cluster_selection)

    def crf(self, stream_sets, saliency, objects):
        c = self.cfg
        with _stage("crf"):
            model = build_crf(stream_sets, saliency, [objects] * len(stream_sets), c.alpha1,
                              c.alpha2, c.color_weight, c.pair_budget)
            labeling, bound = solve_trws(model, c.trws_iters, c.trws_tol)
            return model, labeling, bound

    def refine_params(self):
        c = self.cfg
        return RefineParams(smoothness=c.refine_smoothness, temporal=c.refine_temporal,
                            prior_blend=c.refine_prior_blend, clusters=c.refine_clusters, seed=c.seed)

    def refine(self, video, flows, selected, saliency):
        with _stage("refine", video.id):
            return refine_streams(video, flows, selected, saliency, self.refine_params())


def selected_streams(model, labeling, stream_sets):
    """Per video, the stream chosen for each object slot (in slot order)."""
    out = {ss.video_id: [] for ss in stream_sets}
    by_id = {ss.video_id: ss for ss in stream_sets}
    for (vid, _), state in zip(model.nodes, labeling.states):
        out[vid].append(by_id[vid].streams[state])
    return out


def _write_outputs(out, videos, masks):
    for v in videos:
        write_masks(out / "masks", v.id, masks[v.id])
        render_overlay(v, masks[v.id], out / "overlay" / v.id)


def run_pipeline(manifest_path, cfg=None, out_dir=None, dump_stages=False, threads=None, log=None):
    """Full run: flow, superpixels, saliency, proposals, expansion, streams, CRF, refinement.

    Writes masks, overlays and (when ground truth exists) ``report.json``
    under ``out_dir``; returns ``(masks_by_video, report_or_None)``.
    """
    log = log or (lambda msg: None)
    cfg = cfg or PipelineConfig()
    pipe = Pipeline(cfg, threads)
    timing = {}
    clock = time.perf_counter()

    def tick(name):
        nonlocal clock
        now = time.perf_counter()
        timing[name] = round(now - clock, 4)
        clock = now
        log(f"{name:<10s} {timing[name]:8.2f}s")

    with _stage("load"):
        manifest = Manifest.load(manifest_path)
        videos = manifest.load_videos()
        gts = manifest.load_ground_truth(videos)
    out = Path(out_dir) if out_dir is not None else None
    stages = out / "stages" if (out is not None and dump_stages) else None
    tick("load")

    flows = pipe.map(pipe.flow, videos)
    tick("flow")
    spms = pipe.map(lambda i: pipe.tcs(videos[i], flows[i][0]), range(len(videos)))
    tick("tcs")
    saliency = pipe.saliency(videos)
    tick("saliency")
    scored = pipe.map(lambda i: pipe.proposals(videos[i], spms[i], flows[i][1]), range(len(videos)))
    tick("proposals")
    warps = [pipe.warp_cache(v, s) for v, s in zip(videos, spms)]
    expanded = pipe.map(lambda i: pipe.expand(videos[i], spms[i], flows[i][1], scored[i][0],
                                              scored[i][1], warps[i]), range(len(videos)))
    tick("expand")
    streams = pipe.map(lambda i: pipe.streams(videos[i], spms[i], expanded[i], warps[i]),
                       range(len(videos)))
    merged = [s[1] for s in streams]
    tick("streams")
    model, labeling, bound = pipe.crf(merged, saliency, manifest.objects)
    chosen = selected_streams(model, labeling, merged)
    log(f"crf        energy {labeling.energy:.6f} bound {bound:.6f} states {list(labeling.states)}")
    tick("crf")
    masks = dict(zip([v.id for v in videos], pipe.map(
        lambda i: pipe.refine(videos[i], flows[i][1], chosen[videos[i].id], saliency[i]),
        range(len(videos)))))
    tick("refine")

    if stages is not None:
        for i, v in enumerate(videos):
            d = stages / v.id
            d.mkdir(parents=True, exist_ok=True)
            np.savez_compressed(d / "flow.npz", forward=np.stack(flows[i][0]),
                                per_frame=np.stack(flows[i][1]))
            spms[i].dump(d / "tcs")
            write_proposals(d / "proposals", scored[i][0])
            (d / "proposals" / "meta.json").write_text(json.dumps({"mean_chi2": scored[i][1]}))
            write_proposals(d / "expanded", expanded[i])
            write_streams(d / "streams_raw", streams[i][0], expanded[i])
            write_streams(d / "streams", merged[i], expanded[i])
        np.savez_compressed(stages / "saliency.npz", **{v.id: s for v, s in zip(videos, saliency)})
        dump_model(model, stages / "crf.model")
        _save_labeling(stages / "labeling.json", labeling, bound)

    report = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_outputs(out, videos, masks)
    if any(gts):
        report = evaluate_iou(masks, videos, gts, manifest.name, cfg.to_dict(), timing)
        if out is not None:
            report.save(out / "report.json")
    return masks, report


def _save_labeling(path, labeling, bound):
    Path(path).write_text(json.dumps({"states": list(labeling.states), "energy": labeling.energy,
                                      "lower_bound": bound}, indent=2) + "\n")


# ---------------------------------------------------------------- single stages

def _need(path):
    if not Path(path).exists():
        raise StageError("input", None, f"missing prior dump {path}")
    return path


def _load_flows(d):
    with np.load(_need(d / "flow.npz")) as z:
        return list(z["forward"]), list(z["per_frame"])


def run_stage(name, manifest_path, cfg=None, out_dir=".", model_path=None, threads=None, echo=print):
    """Run one stage from the dumps under ``<out_dir>/stages`` and dump its output."""
    if name not in STAGES:
        raise ValueError(f"unknown stage {name!r}; choose from {', '.join(STAGES)}")
    cfg = cfg or PipelineConfig()
    pipe = Pipeline(cfg, threads)
    out = Path(out_dir)
    stages = out / "stages"

    if name == "crf" and model_path is not None:
        with _stage("crf"):
            model = load_model(_need(model_path))
            labeling, bound = solve_trws(model, cfg.trws_iters, cfg.trws_tol)
        echo(f"labeling {' '.join(map(str, labeling.states))}")
        echo(f"energy {labeling.energy!r}")
        echo(f"lower_bound {bound!r}")
        return labeling

    with _stage("load"):
        manifest = Manifest.load(manifest_path)
        videos = manifest.load_videos()
    dirs = [stages / v.id for v in videos]

    if name == "eval":
        with _stage("eval"):
            gts = manifest.load_ground_truth(videos)
            masks = {v.id: read_masks(_need(out / "masks"), v) for v in videos}
            report = evaluate_iou(masks, videos, gts, manifest.name, cfg.to_dict())
        report.save(out / "report.json")
        echo(report.format())
        return report

    if name == "flow":
        for v, d in zip(videos, dirs):
            fwd, per = pipe.flow(v)
            d.mkdir(parents=True, exist_ok=True)
            np.savez_compressed(d / "flow.npz", forward=np.stack(fwd), per_frame=np.stack(per))
        return None
    if name == "tcs":
        for v, d in zip(videos, dirs):
            pipe.tcs(v, _load_flows(d)[0]).dump(d / "tcs")
        return None

    spms = [SuperpixelMap.load(_need(d / "tcs")) for d in dirs]
    if name == "proposals":
        for v, d, spm in zip(videos, dirs, spms):
            scored, mc = pipe.proposals(v, spm, _load_flows(d)[1])
            write_proposals(d / "proposals", scored)
            (d / "proposals" / "meta.json").write_text(json.dumps({"mean_chi2": mc}))
        return None
    if name == "expand":
        for v, d, spm in zip(videos, dirs, spms):
            scored = read_proposals(_need(d / "proposals"), v, spm)
            mc = json.loads((d / "proposals" / "meta.json").read_text())["mean_chi2"]
            exp = pipe.expand(v, spm, _load_flows(d)[1], scored, mc, pipe.warp_cache(v, spm))
            write_proposals(d / "expanded", exp)
        return None

    expanded = [read_proposals(_need(d / "expanded"), v, spm) for v, d, spm in zip(videos, dirs, spms)]
    if name == "streams":
        for v, d, spm, exp in zip(videos, dirs, spms, expanded):
            raw, merged = pipe.streams(v, spm, exp, pipe.warp_cache(v, spm))
            write_streams(d / "streams_raw", raw, exp)
            write_streams(d / "streams", merged, exp)
        return None

    merged = [read_streams(_need(d / "streams"), exp, v.id) for v, d, exp in zip(videos, dirs, expanded)]
    if name == "crf":
        saliency = pipe.saliency(videos)
        stages.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(stages / "saliency.npz", **{v.id: s for v, s in zip(videos, saliency)})
        model, labeling, bound = pipe.crf(merged, saliency, manifest.objects)
        dump_model(model, stages / "crf.model")
        _save_labeling(stages / "labeling.json", labeling, bound)
        echo(f"labeling {' '.join(map(str, labeling.states))}")
        echo(f"energy {labeling.energy!r}")
        return labeling

    if name == "refine":
        lab = json.loads(_need(stages / "labeling.json").read_text())
        model = load_model(_need(stages / "crf.model"))
        with np.load(_need(stages / "saliency.npz")) as z:
            saliency = [z[v.id] for v in videos]
        labeling = Labeling(tuple(lab["states"]), evaluate_energy(model, lab["states"]))
        chosen = selected_streams(model, labeling, merged)
        masks = {v.id: pipe.refine(v, _load_flows(d)[1], chosen[v.id], s)
                 for v, d, s in zip(videos, dirs, saliency)}
        _write_outputs(out, videos, masks)
        return masks


def report_without_timing(path):
    """Report JSON text with timing removed (for determinism comparisons)."""
    r = EvalReport.load(path)
    r.timing = {}
    return r.to_json()
