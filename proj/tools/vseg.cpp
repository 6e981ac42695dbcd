// vseg: vessel segmentation with a graph-attention guided diffusion model.
// Subcommands: synth, graph-build, train, sample, eval, attn-dump, ablate.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vseg/config.hpp"
#include "vseg/data_pipeline.hpp"
#include "vseg/inference.hpp"
#include "vseg/metrics.hpp"
#include "vseg/model.hpp"
#include "vseg/training.hpp"

namespace fs = std::filesystem;
using namespace vseg;

namespace {

constexpr const char* kVersion = "vseg 0.1.0";

// exit codes: 0 ok, 2 usage, 3 missing file, 4 config violation, 5 runtime
constexpr int kExitUsage = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitConfig = 4;
constexpr int kExitRuntime = 5;

struct MissingFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
    if (!fs::exists(path)) throw MissingFileError("no such file: " + path);
}

// VSEG_OUT_ROOT is the only environment variable the CLI honors: relative
// output paths are resolved under it.
std::string resolve_out(const std::string& path) {
    const char* root = std::getenv("VSEG_OUT_ROOT");
    if (!root || !*root || fs::path(path).is_absolute()) return path;
    return (fs::path(root) / path).string();
}

void ensure_parent(const std::string& path) {
    fs::path p = fs::path(path).parent_path();
    if (!p.empty()) fs::create_directories(p);
}

std::string join_args(int argc, char** argv) {
    std::ostringstream os;
    for (int i = 0; i < argc; ++i) os << (i ? " " : "") << argv[i];
    return os.str();
}

void emit_manifest(const std::string& out_dir, const Config& cfg, const std::string& command,
                   std::uint64_t seed) {
    fs::create_directories(out_dir);
    Config c = cfg;
    c.set("run.version", kVersion);
    c.set_int("run.csv_schema", 1);
    write_manifest(out_dir + "/run_manifest.txt", c, command, seed);
}

Volume all_ones_like(const Volume& v) {
    Volume m(v.nz(), v.ny(), v.nx(), 1.0);
    m.spacing = v.spacing;
    return m;
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, int count) {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < count; ++i) seeds.push_back(base + static_cast<std::uint64_t>(i) * 7919ULL);
    return seeds;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out_dir, std::uint64_t seed, int size, int depth, int cases,
              int branches, const std::string& command) {
    PhantomParams p;
    p.seed = seed;
    p.size = size;
    p.depth = depth;
    p.n_branches = branches;
    std::string manifest = write_phantom_dataset(out_dir, p, cases);
    Config c;
    c.set("synth.out_dir", out_dir);
    c.set_int("synth.cases", cases);
    c.set_int("synth.size", size);
    c.set_int("synth.depth", depth);
    c.set_int("synth.branches", branches);
    emit_manifest(out_dir, c, command, seed);
    std::cout << "wrote " << cases << " phantom cases; manifest: " << manifest << "\n";
    return 0;
}

int cmd_graph_build(const std::string& mask_path, const std::string& grid_spec,
                    const std::string& out_path, double tau_factor, double bg_speed,
                    const std::string& command) {
    require_file(mask_path);
    Volume mask = io::read_nifti(mask_path);
    GridSpec grid = parse_grid(grid_spec);
    EdgePolicy policy;
    policy.tau_factor = tau_factor;
    policy.background_speed = bg_speed;
    VesselGraph g = build_graph(mask, grid, policy);
    g.validate();
    ensure_parent(out_path);
    write_graph(out_path, g);
    Config c;
    c.set("graph.mask", mask_path);
    c.set("graph.grid", grid_spec);
    c.set_double("graph.tau_factor", tau_factor);
    c.set_double("graph.background_speed", bg_speed);
    emit_manifest(fs::path(out_path).parent_path().string().empty()
                      ? "."
                      : fs::path(out_path).parent_path().string(),
                  c, command, 0);
    std::cout << "graph: " << g.n_nodes() << " nodes, " << g.n_edges() << " edges -> " << out_path
              << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, std::string manifest_override,
              std::string out_dir_override, const std::string& command) {
    require_file(config_path);
    Config file_cfg = Config::load(config_path);
    TrainConfig cfg = TrainConfig::from_config(file_cfg);
    std::string manifest = manifest_override.empty() ? file_cfg.require("data.manifest") : manifest_override;
    std::string out_dir = out_dir_override.empty() ? file_cfg.get_str("output.dir", "train_out") : out_dir_override;
    require_file(manifest);

    PreprocessOptions pre;
    pre.target_size = file_cfg.get_int("data.target_size", 256);
    auto cases = read_dataset_manifest(manifest);
    int n_test = file_cfg.get_int("data.test_cases", 0);
    if (n_test < 0 || n_test >= static_cast<int>(cases.size()))
        throw std::invalid_argument("data.test_cases out of range");
    std::vector<DatasetCase> train_cases(cases.begin(), cases.end() - n_test);

    auto items = load_train_items(train_cases, pre, cfg.node_grid, cfg.edge_policy);
    std::cout << "training on " << items.size() << " slices from " << train_cases.size()
              << " cases (tier " << tier_name(cfg.tier) << ")\n";

    Config run_cfg = file_cfg;
    cfg.to_config(run_cfg);
    emit_manifest(out_dir, run_cfg, command, cfg.seed);
    auto res = train(cfg, items, out_dir, [](int iter, const LossTerms& l) {
        std::cout << "iter " << iter << " total " << l.total << " den " << l.denoising << " graph "
                  << l.graph << "\n";
    });
    if (res.diverged) {
        std::cout << "training diverged; checkpoint: " << res.checkpoint_path << "\n";
        return kExitRuntime;
    }
    std::cout << "checkpoint: " << res.checkpoint_path << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& input_path,
               const std::string& liver_path, const std::string& out_path,
               const std::string& prob_out, int n_seeds, std::uint64_t seed, int steps,
               const std::string& postprocess, const std::string& graph_mode_s, int knn_k,
               int rescale_to, const std::string& command) {
    require_file(ckpt_path);
    require_file(input_path);
    auto ck = load_checkpoint(ckpt_path);
    Volume ct = io::read_nifti(input_path);
    Volume liver = liver_path.empty() ? all_ones_like(ct) : io::read_nifti(liver_path);
    if (!liver_path.empty()) require_file(liver_path);

    PreprocessOptions pre;
    pre.target_size = ck.config.get_int("data.target_size", 256);
    auto prep = preprocess_case(ct, liver, nullptr, pre);

    PredictOptions opts;
    opts.seeds = seed_list(seed, n_seeds);
    opts.steps = steps > 0 ? steps : ck.schedule.T;
    opts.graph_mode = parse_graph_mode(graph_mode_s);
    opts.knn_k = knn_k;
    opts.node_grid = parse_grid(ck.config.get_str("train.node_grid", "32x32x3"));
    if (postprocess == "on") opts.postprocess = true;
    else if (postprocess == "off") opts.postprocess = false;
    else throw std::invalid_argument("--postprocess must be on or off");

    ensure_parent(out_path);
    if (!prob_out.empty()) ensure_parent(prob_out);
    Volume prob;
    Volume pred = predict_volume(*ck.model, ck.schedule, prep.ct, opts, &prob);
    if (rescale_to > 0) {
        pred = rescale(pred, rescale_to, rescale_to);
        for (std::int64_t i = 0; i < prob.size(); ++i) prob[i] = std::clamp((prob[i] + 1.0) / 2.0, 0.0, 1.0);
        prob = rescale(prob, rescale_to, rescale_to);
    }
    io::write_nifti(out_path, pred, true);
    if (!prob_out.empty()) io::write_nifti(prob_out, prob);

    Config c = ck.config;
    c.set("sample.input", input_path);
    c.set("sample.out", out_path);
    c.set_int("sample.seeds", n_seeds);
    c.set_int("sample.steps", opts.steps);
    c.set("sample.postprocess", postprocess);
    c.set("sample.graph", graph_mode_s);
    std::string dir = fs::path(out_path).parent_path().string();
    emit_manifest(dir.empty() ? "." : dir, c, command, seed);
    std::cout << "prediction: " << out_path << " (" << pred.count_nonzero() << " voxels)\n";
    return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_csv,
             double min_volume, const std::string& spacing_override, const std::string& command) {
    if (!fs::is_directory(pred_dir)) throw MissingFileError("no such directory: " + pred_dir);
    if (!fs::is_directory(gt_dir)) throw MissingFileError("no such directory: " + gt_dir);
    std::vector<MetricReport> rows;
    std::vector<std::string> gt_files;
    for (const auto& e : fs::directory_iterator(gt_dir))
        if (e.path().extension() == ".nii") gt_files.push_back(e.path().filename().string());
    std::sort(gt_files.begin(), gt_files.end());
    for (const auto& name : gt_files) {
        std::string pred_path = pred_dir + "/" + name;
        if (!fs::exists(pred_path)) continue;
        Volume gt = io::read_nifti(gt_dir + "/" + name);
        Volume pred = io::read_nifti(pred_path);
        if (!spacing_override.empty()) {
            std::istringstream is(spacing_override);
            char sep1 = 0, sep2 = 0;
            std::array<double, 3> sp{};
            if (!(is >> sp[0] >> sep1 >> sp[1] >> sep2 >> sp[2]))
                throw std::invalid_argument("--spacing must look like z:y:x");
            gt.spacing = sp;
            pred.spacing = sp;
        }
        rows.push_back(evaluate_case(name, pred, gt, min_volume));
    }
    if (rows.empty()) throw MissingFileError("no matching prediction/ground-truth pairs");
    ensure_parent(out_csv);
    write_report_csv(out_csv, rows);

    std::vector<std::optional<double>> dsc, sen, spe, cld, con;
    for (const auto& r : rows) {
        dsc.push_back(r.overlap.dsc);
        sen.push_back(r.overlap.sen);
        spe.push_back(r.overlap.spe);
        cld.push_back(r.cldice);
        con.push_back(r.con.con);
    }
    auto show = [](const char* name, const MeanStd& ms) {
        std::cout << name << ": ";
        if (ms.mean) std::cout << *ms.mean << " +/- " << *ms.stddev;
        else std::cout << "n/a";
        std::cout << "\n";
    };
    std::cout << rows.size() << " cases -> " << out_csv << "\n";
    show("dsc", aggregate(dsc));
    show("sen", aggregate(sen));
    show("spe", aggregate(spe));
    show("cldice", aggregate(cld));
    show("con", aggregate(con));

    Config c;
    c.set("eval.pred_dir", pred_dir);
    c.set("eval.gt_dir", gt_dir);
    c.set_double("eval.min_volume_mm3", min_volume);
    std::string dir = fs::path(out_csv).parent_path().string();
    emit_manifest(dir.empty() ? "." : dir, c, command, 0);
    return 0;
}

int cmd_attn_dump(const std::string& ckpt_path, const std::string& input_path, int slice, int t,
                  const std::string& grid_spec, const std::string& out_csv, std::uint64_t init_seed,
                  const std::string& command) {
    std::unique_ptr<GuidedDiffusionModel> model;
    NoiseSchedule sched;
    int target_size = 64;
    if (!ckpt_path.empty()) {
        require_file(ckpt_path);
        auto ck = load_checkpoint(ckpt_path);
        model = std::move(ck.model);
        sched = ck.schedule;
        target_size = ck.config.get_int("data.target_size", 256);
    } else {
        ModelConfig mc;
        mc.depths = 4;
        mc.base_width = 8;
        mc.cond_width = 4;
        mc.liif_dim = 12;
        mc.attn_dim = 12;
        model = std::make_unique<GuidedDiffusionModel>(mc, Tier::ABC, init_seed);
        sched = make_linear_schedule(100, 1e-4, 0.1);
    }
    if (model->tier() != Tier::ABC)
        throw std::invalid_argument("attn-dump needs a graph-conditioned (ABC) model");

    require_file(input_path);
    Volume ct = io::read_nifti(input_path);
    Volume liver = all_ones_like(ct);
    PreprocessOptions pre;
    pre.target_size = target_size;
    auto prep = preprocess_case(ct, liver, nullptr, pre);
    if (slice < 1 || slice > prep.ct.nz() - 2)
        throw std::invalid_argument("slice has no complete 2.5D block");
    if (t < 1 || t > sched.T) throw std::invalid_argument("t outside the schedule");

    GridSpec grid = parse_grid(grid_spec);
    GraphContext ctx(full_graph(grid, {3, prep.ct.ny(), prep.ct.nx()}));
    ConditionBlock c = condition_block_at(prep.ct, slice);
    Tensor x_t = Rng(init_seed).normal_tensor({prep.ct.ny(), prep.ct.nx()});
    auto out = model->denoise_step(x_t, c, t, &ctx);

    ensure_parent(out_csv);
    std::ofstream f(out_csv);
    if (!f) throw std::runtime_error("cannot write " + out_csv);
    f.precision(10);
    f << "scale,node_i,node_j,alpha\n";
    auto scales = model->config().effective_scales();
    for (std::size_t s = 0; s < out.alphas.size(); ++s) {
        const Var& alpha = out.alphas[s];
        for (int i = 0; i < ctx.adj->n_nodes; ++i)
            for (int k = ctx.adj->seg[static_cast<std::size_t>(i)];
                 k < ctx.adj->seg[static_cast<std::size_t>(i) + 1]; ++k)
                f << scales[s] << "," << i << "," << ctx.adj->src[static_cast<std::size_t>(k)] << ","
                  << alpha->value[k] << "\n";
    }
    Config cfg;
    cfg.set("attn.input", input_path);
    cfg.set("attn.grid", grid_spec);
    cfg.set_int("attn.slice", slice);
    cfg.set_int("attn.t", t);
    std::string dir = fs::path(out_csv).parent_path().string();
    emit_manifest(dir.empty() ? "." : dir, cfg, command, init_seed);
    std::cout << "attention table -> " << out_csv << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& tiers_csv,
               std::string manifest_override, const std::string& out_dir,
               const std::string& command) {
    require_file(config_path);
    Config file_cfg = Config::load(config_path);
    std::string manifest = manifest_override.empty() ? file_cfg.require("data.manifest") : manifest_override;
    require_file(manifest);
    auto cases = read_dataset_manifest(manifest);
    int n_test = file_cfg.get_int("data.test_cases", 5);
    if (n_test < 1 || n_test >= static_cast<int>(cases.size()))
        throw std::invalid_argument("data.test_cases out of range for ablation");
    std::vector<DatasetCase> train_cases(cases.begin(), cases.end() - n_test);
    std::vector<DatasetCase> test_cases(cases.end() - n_test, cases.end());

    PreprocessOptions pre;
    pre.target_size = file_cfg.get_int("data.target_size", 256);

    std::vector<std::string> tiers;
    {
        std::istringstream is(tiers_csv);
        std::string tok;
        while (std::getline(is, tok, ',')) tiers.push_back(tok);
    }
    if (tiers.empty()) throw std::invalid_argument("--tiers is empty");

    fs::create_directories(out_dir);
    std::ofstream cmp(out_dir + "/ablation.csv");
    cmp << "tier,dsc_mean,dsc_std,sen_mean,sen_std,spe_mean,spe_std,cldice_mean,con_mean\n";
    emit_manifest(out_dir, file_cfg, command, std::stoull(file_cfg.get_str("train.seed", "0")));

    for (const std::string& tier_s : tiers) {
        TrainConfig cfg = TrainConfig::from_config(file_cfg);
        cfg.tier = parse_tier(tier_s);
        auto items = load_train_items(train_cases, pre, cfg.node_grid, cfg.edge_policy);
        std::string tier_dir = out_dir + "/tier_" + tier_s;
        std::cout << "=== tier " << tier_s << ": training on " << items.size() << " slices ===\n";
        auto res = train(cfg, items, tier_dir, [](int iter, const LossTerms& l) {
            std::cout << "  iter " << iter << " total " << l.total << "\n";
        });
        auto ck = load_checkpoint(res.checkpoint_path);

        PredictOptions popts;
        popts.steps = cfg.schedule_T;
        popts.node_grid = cfg.node_grid;
        popts.seeds = seed_list(cfg.seed + 101, file_cfg.get_int("sample.seeds", 1));
        popts.postprocess = file_cfg.get_bool("sample.postprocess", true);

        std::vector<MetricReport> rows;
        for (const auto& tc : test_cases) {
            Volume ct = io::read_nifti(tc.ct_path);
            Volume gt_raw = io::read_nifti(tc.mask_path);
            Volume liver = all_ones_like(ct);
            auto prep = preprocess_case(ct, liver, &gt_raw, pre);
            Volume pred = predict_volume(*ck.model, ck.schedule, prep.ct, popts);
            rows.push_back(evaluate_case(tc.id, pred, prep.vessel,
                                         file_cfg.get_double("eval.min_volume_mm3", 120.0)));
        }
        write_report_csv(tier_dir + "/report.csv", rows);
        std::vector<std::optional<double>> dsc, sen, spe, cld, con;
        for (const auto& r : rows) {
            dsc.push_back(r.overlap.dsc);
            sen.push_back(r.overlap.sen);
            spe.push_back(r.overlap.spe);
            cld.push_back(r.cldice);
            con.push_back(r.con.con);
        }
        auto d = aggregate(dsc), s = aggregate(sen), p = aggregate(spe), c2 = aggregate(cld),
             co = aggregate(con);
        cmp << tier_s << "," << d.mean.value_or(0) << "," << d.stddev.value_or(0) << ","
            << s.mean.value_or(0) << "," << s.stddev.value_or(0) << "," << p.mean.value_or(0) << ","
            << p.stddev.value_or(0) << "," << c2.mean.value_or(0) << "," << co.mean.value_or(0)
            << "\n";
        cmp.flush();
        std::cout << "tier " << tier_s << " dsc " << d.mean.value_or(0) << "\n";
    }
    std::cout << "ablation table -> " << out_dir << "/ablation.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vessel segmentation with graph-attention guided diffusion"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    std::string command = join_args(argc, argv);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic vessel phantom dataset");
    std::uint64_t synth_seed = 0;
    int synth_size = 64, synth_depth = 16, synth_cases = 10, synth_branches = 7;
    std::string synth_out = "phantoms";
    synth->add_option("--seed", synth_seed, "base seed");
    synth->add_option("--size", synth_size, "in-plane size");
    synth->add_option("--depth", synth_depth, "slice count");
    synth->add_option("--cases", synth_cases, "number of cases");
    synth->add_option("--branches", synth_branches, "tree branches per case");
    synth->add_option("--out-dir", synth_out, "output directory")->required();

    // graph-build
    auto* gb = app.add_subcommand("graph-build", "build a vessel graph from a mask volume");
    std::string gb_mask, gb_grid = "32x32x3", gb_out = "graph.txt";
    double gb_tau = 3.0, gb_speed = 1e-3;
    gb->add_option("--mask", gb_mask, "binary mask volume (.nii)")->required();
    gb->add_option("--grid", gb_grid, "node grid, e.g. 32x32x3");
    gb->add_option("--out", gb_out, "output graph file")->required();
    gb->add_option("--tau-factor", gb_tau, "edge threshold in grid-pitch units");
    gb->add_option("--background-speed", gb_speed, "speed outside the vessel");

    // train
    auto* tr = app.add_subcommand("train", "train a model from a run config");
    std::string tr_config, tr_manifest, tr_out;
    tr->add_option("--config", tr_config, "run config file")->required();
    tr->add_option("--manifest", tr_manifest, "dataset manifest override");
    tr->add_option("--out-dir", tr_out, "output directory override");

    // sample
    auto* sm = app.add_subcommand("sample", "segment a volume with a trained checkpoint");
    std::string sm_ckpt, sm_input, sm_liver, sm_out = "pred.nii", sm_prob, sm_post = "on",
                sm_graph = "full";
    int sm_seeds = 1, sm_steps = 0, sm_knn = 8, sm_rescale = 0;
    std::uint64_t sm_seed = 0;
    sm->add_option("--checkpoint", sm_ckpt)->required();
    sm->add_option("--input", sm_input, "CT volume (.nii)")->required();
    sm->add_option("--liver", sm_liver, "liver mask volume");
    sm->add_option("--out", sm_out, "output mask volume")->required();
    sm->add_option("--prob-out", sm_prob, "optional mean-signal probability volume");
    sm->add_option("--seeds", sm_seeds, "ensemble size");
    sm->add_option("--seed", sm_seed, "base seed");
    sm->add_option("--steps", sm_steps, "denoising steps (must equal the trained schedule)");
    sm->add_option("--postprocess", sm_post, "on|off");
    sm->add_option("--graph", sm_graph, "inference graph: full|empty|knn");
    sm->add_option("--knn-k", sm_knn, "neighbors for --graph knn");
    sm->add_option("--rescale", sm_rescale, "rescale output in-plane to NxN (0 = off)");

    // eval
    auto* ev = app.add_subcommand("eval", "metric report over prediction/ground-truth pairs");
    std::string ev_pred, ev_gt, ev_out = "report.csv", ev_spacing;
    double ev_minvol = 120.0;
    bool ev_hdr = true;
    ev->add_option("--pred-dir", ev_pred)->required();
    ev->add_option("--gt-dir", ev_gt)->required();
    ev->add_option("--out", ev_out, "report CSV path");
    ev->add_option("--min-volume", ev_minvol, "connectivity volume threshold (mm^3)");
    ev->add_flag("--spacing-from-header", ev_hdr, "take spacing from the NIfTI headers (default)");
    ev->add_option("--spacing", ev_spacing, "override spacing as z:y:x");

    // attn-dump
    auto* ad = app.add_subcommand("attn-dump", "write per-edge attention weights as CSV");
    std::string ad_ckpt, ad_input, ad_grid = "8x8x3", ad_out = "attention.csv";
    int ad_slice = 1, ad_t = 1;
    std::uint64_t ad_seed = 0;
    ad->add_option("--checkpoint", ad_ckpt, "trained checkpoint (fresh-init model when absent)");
    ad->add_option("--input", ad_input, "CT volume (.nii)")->required();
    ad->add_option("--slice", ad_slice, "central slice index");
    ad->add_option("--t", ad_t, "timestep");
    ad->add_option("--grid", ad_grid, "node grid of the fully-connected graph");
    ad->add_option("--out", ad_out, "output CSV");
    ad->add_option("--init-seed", ad_seed, "fresh-init seed when no checkpoint is given");

    // ablate
    auto* ab = app.add_subcommand("ablate", "cumulative component ablation: train + eval per tier");
    std::string ab_config, ab_tiers = "A,AB,ABC", ab_manifest, ab_out = "ablation_out";
    ab->add_option("--config", ab_config, "run config file")->required();
    ab->add_option("--tiers", ab_tiers, "comma-separated tiers");
    ab->add_option("--manifest", ab_manifest, "dataset manifest override");
    ab->add_option("--out-dir", ab_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth->parsed())
            return cmd_synth(resolve_out(synth_out), synth_seed, synth_size, synth_depth, synth_cases,
                             synth_branches, command);
        if (gb->parsed()) return cmd_graph_build(gb_mask, gb_grid, resolve_out(gb_out), gb_tau, gb_speed, command);
        if (tr->parsed())
            return cmd_train(tr_config, tr_manifest, tr_out.empty() ? tr_out : resolve_out(tr_out), command);
        if (sm->parsed())
            return cmd_sample(sm_ckpt, sm_input, sm_liver, resolve_out(sm_out),
                              sm_prob.empty() ? sm_prob : resolve_out(sm_prob), sm_seeds, sm_seed,
                              sm_steps, sm_post, sm_graph, sm_knn, sm_rescale, command);
        if (ev->parsed()) return cmd_eval(ev_pred, ev_gt, resolve_out(ev_out), ev_minvol, ev_spacing, command);
        if (ad->parsed())
            return cmd_attn_dump(ad_ckpt, ad_input, ad_slice, ad_t, ad_grid,
                                 resolve_out(ad_out), ad_seed, command);
        if (ab->parsed())
            return cmd_ablate(ab_config, ab_tiers, ab_manifest, resolve_out(ab_out), command);
    } catch (const MissingFileError& e) {
        std::cerr << "error: code=" << kExitMissingFile << " kind=\"missing-file\" msg=\"" << e.what()
                  << "\"\n";
        return kExitMissingFile;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: code=" << kExitConfig << " kind=\"config\" msg=\"" << e.what() << "\"\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: code=" << kExitRuntime << " kind=\"runtime\" msg=\"" << e.what() << "\"\n";
        return kExitRuntime;
    }
    return 0;
}
