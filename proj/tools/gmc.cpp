/*
 *   Copyright 2026 The gmcomplete Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gmc/run.hpp"

namespace {

struct Cli {
    std::string config;
    std::string command;
    gmc::RunConfig cfg;

    // Pending flag overrides; applied on top of the config file so the
    // precedence is defaults < config file < GMC_WORKERS < flags.
    CLI::App app{"Geometric matrix completion pipeline: synthetic data, training, evaluation, ablation."};
};

void add_common(CLI::App* sub, Cli& cli) {
    sub->add_option("--config", cli.config, "JSON run configuration (defaults apply where keys are absent)");
    sub->callback([&cli, sub] { cli.command = sub->get_name(); });
}

}  // namespace

int main(int argc, char** argv) {
    Cli cli;
    cli.app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::string out, dataset, checkpoint, corrupt_block, variant;
    gmc::index_t workers = 0, folds = 0, rows = 0, features = 0, synth_rank = 0;
    gmc::index_t rank = 0, cheb_order = 0, hidden_units = 0, diffusion_steps = 0, epochs = 0, knn_k = 0;
    double sigma = -1.0, observed_frac = -1.0, label_signal = -1.0, learning_rate = -1.0, age_threshold = -1.0;
    std::vector<double> fractions;
    std::vector<std::uint64_t> seeds;

    auto add_run_opts = [&](CLI::App* sub) {
        add_common(sub, cli);
        sub->add_option("--seed", seed, "Run seed");
        sub->add_option("--out", out, "Output directory");
        sub->add_option("--workers", workers, "Worker threads (also env GMC_WORKERS)");
    };
    auto add_dataset_opt = [&](CLI::App* sub) {
        sub->add_option("--dataset", dataset, "Dataset snapshot base path");
    };
    auto add_graph_opts = [&](CLI::App* sub) {
        sub->add_option("--variant", variant, "Graph variant: knn or similarity")
            ->check(CLI::IsMember({"knn", "similarity"}));
        sub->add_option("--knn-k", knn_k, "Neighbor count for the knn graph");
        sub->add_option("--age-threshold", age_threshold, "Age window for the similarity graph");
    };
    auto add_train_opts = [&](CLI::App* sub) {
        sub->add_option("--rank", rank, "Factorization rank");
        sub->add_option("--cheb-order", cheb_order, "Chebyshev filter order");
        sub->add_option("--hidden-units", hidden_units, "Recurrent hidden width");
        sub->add_option("--learning-rate", learning_rate, "Adam step size");
        sub->add_option("--diffusion-steps", diffusion_steps, "Diffusion steps per forward pass");
        sub->add_option("--epochs", epochs, "Training epochs");
    };

    CLI::App* synth = cli.app.add_subcommand("synth", "Generate a synthetic dataset snapshot");
    add_run_opts(synth);
    add_dataset_opt(synth);
    synth->add_option("--rows", rows, "Dataset rows");
    synth->add_option("--features", features, "Feature columns");
    synth->add_option("--rank", synth_rank, "Planted rank");
    synth->add_option("--sigma", sigma, "Noise level");
    synth->add_option("--observed-frac", observed_frac, "Observed feature-cell fraction");
    synth->add_option("--label-signal", label_signal, "Label logit scale");

    CLI::App* train = cli.app.add_subcommand("train", "Train the model, write checkpoint and loss trace");
    add_run_opts(train);
    add_dataset_opt(train);
    add_graph_opts(train);
    add_train_opts(train);

    CLI::App* evaluate = cli.app.add_subcommand("evaluate", "Stratified k-fold CV with the paired baseline");
    add_run_opts(evaluate);
    add_dataset_opt(evaluate);
    add_graph_opts(evaluate);
    add_train_opts(evaluate);
    evaluate->add_option("--folds", folds, "Cross-validation folds");

    CLI::App* ablate = cli.app.add_subcommand("ablate", "Feature-completeness sweep with per-cell caching");
    add_run_opts(ablate);
    add_dataset_opt(ablate);
    add_graph_opts(ablate);
    add_train_opts(ablate);
    ablate->add_option("--folds", folds, "Cross-validation folds");
    ablate->add_option("--fractions", fractions, "Descending keep fractions in (0, 1]");
    ablate->add_option("--seeds", seeds, "Sweep seeds");

    CLI::App* impute = cli.app.add_subcommand("impute", "Run a checkpoint forward, write the completed matrix");
    add_run_opts(impute);
    add_dataset_opt(impute);
    add_graph_opts(impute);
    impute->add_option("--checkpoint", checkpoint, "Checkpoint path");

    CLI::App* gradcheck = cli.app.add_subcommand("gradcheck", "Finite-difference check of every gradient path");
    add_run_opts(gradcheck);
    gradcheck->add_option("--corrupt-block", corrupt_block,
                          "Fault-injection hook: perturb this block's analytic gradient");

    CLI11_PARSE(cli.app, argc, argv);

    try {
        gmc::RunConfig cfg = cli.config.empty() ? gmc::RunConfig{} : gmc::load_run_config(cli.config);
        if (const char* env = std::getenv("GMC_WORKERS")) {
            try {
                cfg.workers = std::stol(env);
            } catch (const std::exception&) {
                throw gmc::parameter_error("cli: GMC_WORKERS must be an integer, got '" + std::string(env) + "'");
            }
        }

        CLI::App* active = cli.app.get_subcommands().front();
        auto chosen = [&](const char* name) { return active->count(name) > 0; };
        if (chosen("--seed")) cfg.seed = seed;
        if (chosen("--out")) cfg.out = out;
        if (chosen("--workers")) cfg.workers = workers;
        if (active->get_option_no_throw("--dataset") && chosen("--dataset")) cfg.dataset = dataset;
        if (cfg.workers < 1) throw gmc::parameter_error("cli: workers must be at least 1");

        if (cli.command == "synth") {
            if (chosen("--rows")) cfg.synth.rows = rows;
            if (chosen("--features")) cfg.synth.features = features;
            if (chosen("--rank")) cfg.synth.rank = synth_rank;
            if (chosen("--sigma")) cfg.synth.sigma = sigma;
            if (chosen("--observed-frac")) cfg.synth.observed_frac = observed_frac;
            if (chosen("--label-signal")) cfg.synth.label_signal = label_signal;
        }
        if (active->get_option_no_throw("--variant")) {
            if (chosen("--variant"))
                cfg.graph.variant = variant == "knn" ? gmc::GraphConfig::Variant::knn
                                                     : gmc::GraphConfig::Variant::similarity;
            if (chosen("--knn-k")) cfg.graph.k = knn_k;
            if (chosen("--age-threshold")) cfg.graph.age_threshold = age_threshold;
        }
        if (active->get_option_no_throw("--rank") && cli.command != "synth" && chosen("--rank"))
            cfg.train.rank = rank;
        if (active->get_option_no_throw("--cheb-order")) {
            if (chosen("--cheb-order")) cfg.train.cheb_order = cheb_order;
            if (chosen("--hidden-units")) cfg.train.hidden_units = hidden_units;
            if (chosen("--learning-rate")) cfg.train.learning_rate = learning_rate;
            if (chosen("--diffusion-steps")) cfg.train.diffusion_steps = diffusion_steps;
            if (chosen("--epochs")) cfg.train.epochs = epochs;
        }
        if (active->get_option_no_throw("--folds") && chosen("--folds")) cfg.evaluate.folds = folds;
        if (cli.command == "ablate") {
            if (chosen("--fractions")) cfg.ablate.fractions = fractions;
            if (chosen("--seeds")) cfg.ablate.seeds = seeds;
        }
        if (cli.command == "impute" && chosen("--checkpoint")) cfg.checkpoint = checkpoint;
        if (cli.command == "gradcheck" && chosen("--corrupt-block")) cfg.corrupt_block = corrupt_block;

        if (cli.command == "synth") gmc::cmd_synth(cfg, std::cout);
        else if (cli.command == "train") gmc::cmd_train(cfg, std::cout);
        else if (cli.command == "evaluate") gmc::cmd_evaluate(cfg, std::cout);
        else if (cli.command == "ablate") gmc::cmd_ablate(cfg, std::cout);
        else if (cli.command == "impute") gmc::cmd_impute(cfg, std::cout);
        else if (cli.command == "gradcheck") return gmc::cmd_gradcheck(cfg, std::cout);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
