#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emvae/pipeline.hpp"

using namespace emvae;
using namespace emvae::pipeline;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) out.push_back(parse_double(item, what));
    return out;
}

std::array<double, KpiVector::size> parse_noise(const std::string& s) {
    const auto v = parse_doubles(s, "--noise");
    std::array<double, KpiVector::size> out{};
    if (v.size() == 1)
        out.fill(v[0]);
    else if (v.size() == KpiVector::size)
        std::copy(v.begin(), v.end(), out.begin());
    else
        throw ConfigError("--noise takes one value or one per KPI");
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"emvae: variational-autoencoder metamodel and latent-space optimizer for PM machine designs"};
    app.require_subcommand(1);

    GlobalOptions g;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Seed for every random stream of the command")->group("Global");
    app.add_option("--out-dir", g.out_dir, "Directory for artifacts and manifest.json")->group("Global");
    app.add_option("--config", g.config, "Topology registry JSON (default: built-in SV/DV)")->group("Global");
    app.add_option("--threads", g.threads, "Worker threads for population evaluation and sweep cells")
        ->check(CLI::PositiveNumber)
        ->group("Global");
    app.add_flag("--quiet", g.quiet, "Suppress progress output")->group("Global");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Sample designs, score them with the KPI oracle, split and save");
    std::size_t sv = 4000, dv = 4000;
    std::string counts_s, split_s = "0.9,0.05,0.05", noise_s = "0";
    bool realism = false;
    GenDataOptions gen_o;
    gen->add_option("--sv", sv, "Single-V sample count");
    gen->add_option("--dv", dv, "Double-V sample count");
    gen->add_option("--counts", counts_s, "Per-topology counts id=n,... (overrides --sv/--dv)");
    gen->add_option("--split", split_s, "train,val,test fractions");
    gen->add_option("--noise", noise_s, "Relative KPI noise std (one value or one per KPI)");
    gen->add_flag("--realism", realism, "1 % relative KPI noise");
    gen->add_option("--output", gen_o.output, "Dataset CSV file name");

    // train
    auto* tr = app.add_subcommand("train", "Train the metamodel and report test metrics");
    TrainOptions tr_o;
    auto* tr_data = tr->add_option("--data", tr_o.data, "Dataset CSV (default <out-dir>/dataset.csv)");
    tr->add_option("--latent-dim", tr_o.vae.latent_dim, "Latent dimension m");
    tr->add_option("--epochs", tr_o.train.epochs, "Maximum epochs");
    tr->add_option("--patience", tr_o.train.patience, "Early-stopping patience (epochs)");
    tr->add_option("--batch-size", tr_o.train.batch_size, "Mini-batch size");
    tr->add_option("--lr", tr_o.train.lr_start, "Initial learning rate");
    tr->add_option("--lr-floor", tr_o.train.lr_floor, "Learning-rate floor");
    tr->add_option("--kl-weight", tr_o.vae.kl_weight, "Weight of the KL term");
    tr->add_option("--model", tr_o.model, "Model file name");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a trained model on a dataset split");
    EvalOptions ev_o;
    std::string ev_split = "test";
    auto* ev_data = ev->add_option("--data", ev_o.data, "Dataset CSV (default <out-dir>/dataset.csv)");
    auto* ev_model = ev->add_option("--model", ev_o.model, "Model file (default <out-dir>/model.json)");
    ev->add_option("--split", ev_split, "train, val or test");

    // sweep
    auto* sw = app.add_subcommand("sweep", "Latent-dimension sweep of reconstruction MAE");
    SweepOptions sw_o;
    std::string dims_s = "5,10,15,19,20";
    auto* sw_data = sw->add_option("--data", sw_o.data, "Dataset CSV (default <out-dir>/dataset.csv)");
    sw->add_option("--dims", dims_s, "Latent dimensions");
    sw->add_option("--epochs", sw_o.train.epochs, "Maximum epochs per cell");
    sw->add_option("--patience", sw_o.train.patience, "Early-stopping patience");
    sw->add_option("--kl-weight", sw_o.vae.kl_weight, "Weight of the KL term");
    sw->add_option("--output", sw_o.output, "Sweep CSV file name");

    // optimize
    auto* op = app.add_subcommand("optimize", "NSGA-II search in the latent space");
    OptimizeOptions op_o;
    std::string objectives_s = "max:y2,min:y4", bounds_s = "envelope";
    auto* op_data = op->add_option("--data", op_o.data, "Dataset CSV; its training split defines latent bounds (default <out-dir>/dataset.csv)");
    auto* op_model = op->add_option("--model", op_o.model, "Model file (default <out-dir>/model.json)");
    op->add_option("--objectives", objectives_s, "Comma-separated dir:kpi list");
    op->add_option("--pop", op_o.nsga.population, "Population size (even)");
    op->add_option("--gen", op_o.nsga.generations, "Generations");
    op->add_option("--pc", op_o.nsga.crossover_prob, "Crossover probability");
    op->add_option("--eta-c", op_o.nsga.eta_c, "SBX distribution index");
    op->add_option("--pm", op_o.nsga.mutation_prob, "Mutation probability per gene (default 1/m)");
    op->add_option("--eta-m", op_o.nsga.eta_m, "Polynomial mutation index");
    op->add_option("--bounds", bounds_s, "Latent bounds rule: envelope or mean_std");
    op->add_option("--bounds-c", op_o.bounds_c, "c for mean +/- c*std bounds");
    op->add_option("--output", op_o.output, "Pareto archive CSV file name");

    // validate-pareto
    auto* vp = app.add_subcommand("validate-pareto", "Re-score Pareto designs with the KPI oracle");
    ValidateOptions vp_o;
    std::string vp_noise = "0";
    auto* vp_archive = vp->add_option("--archive", vp_o.archive, "Pareto archive CSV (default <out-dir>/pareto.csv)");
    vp->add_option("--count", vp_o.count, "Validate the first n rows instead of extremes + knee");
    vp->add_option("--noise", vp_noise, "Relative oracle noise std");
    vp->add_option("--output", vp_o.output, "Report CSV file name");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_config;
    }
    if (*seed_opt) g.seed = seed;
    auto in_out_dir = [&](CLI::Option* opt, std::string& path) {
        if (opt->count() == 0) path = (std::filesystem::path(g.out_dir) / path).string();
    };
    in_out_dir(tr_data, tr_o.data);
    in_out_dir(ev_data, ev_o.data);
    in_out_dir(ev_model, ev_o.model);
    in_out_dir(sw_data, sw_o.data);
    in_out_dir(op_data, op_o.data);
    in_out_dir(op_model, op_o.model);
    in_out_dir(vp_archive, vp_o.archive);

    try {
        if (*gen) {
            if (!counts_s.empty()) {
                gen_o.counts.clear();
                for (const auto& item : split_list(counts_s)) {
                    const auto eq = item.find('=');
                    if (eq == std::string::npos) throw ConfigError("--counts entries are id=n");
                    gen_o.counts[std::stoi(item.substr(0, eq))] =
                        static_cast<std::size_t>(parse_double(item.substr(eq + 1), "--counts"));
                }
            } else {
                gen_o.counts = {{1, sv}, {2, dv}};
            }
            const auto fr = parse_doubles(split_s, "--split");
            if (fr.size() != 3) throw ConfigError("--split needs three fractions");
            gen_o.split = {fr[0], fr[1], fr[2]};
            gen_o.noise = realism ? OracleConfig::realism().noise_std : parse_noise(noise_s);
            gen_data(g, gen_o);
        } else if (*tr) {
            train_cmd(g, tr_o);
        } else if (*ev) {
            ev_o.split = split_from_string(ev_split);
            eval_cmd(g, ev_o);
        } else if (*sw) {
            sw_o.sweep.dims.clear();
            for (double d : parse_doubles(dims_s, "--dims")) {
                if (!(d >= 1.0) || d != std::floor(d)) throw ConfigError("--dims must be positive integers");
                sw_o.sweep.dims.push_back(static_cast<std::size_t>(d));
            }
            sweep_cmd(g, sw_o);
        } else if (*op) {
            op_o.objectives.clear();
            for (const auto& item : split_list(objectives_s)) op_o.objectives.push_back(parse_objective(item));
            if (bounds_s == "envelope")
                op_o.bounds_rule = LatentBoundsRule::envelope;
            else if (bounds_s == "mean_std")
                op_o.bounds_rule = LatentBoundsRule::mean_std;
            else
                throw ConfigError("--bounds must be envelope or mean_std");
            optimize_cmd(g, op_o);
        } else if (*vp) {
            vp_o.noise = parse_noise(vp_noise);
            validate_pareto_cmd(g, vp_o);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
    return exit_ok;
}
