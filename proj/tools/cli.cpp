#include "cli.hpp"

#include <algorithm>
#include <array>
#include <mutex>
#include <ostream>

#include <CLI11.hpp>

#include "precondlab/config.hpp"
#include "precondlab/errors.hpp"
#include "precondlab/experiments.hpp"

namespace precondlab::cli {

namespace {

constexpr std::array<const char*, 5> kSubcommands{"robustness", "ood", "transfer", "verify", "dump-config"};

struct Flags {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    int jobs = 1;
    bool quiet = false;
    std::string experiment;  // dump-config only
};

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("--config", f.config, "JSON config file");
    sub->add_option("--set", f.overrides, "override a config key, e.g. --set steps=500 --set ood.sigma_n=0.05")
        ->allow_extra_args(false);
}

std::string usage(const CLI::App& app) {
    return app.help();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Preconditioned two-layer MLP experiments", "precondlab"};
    app.require_subcommand(1);
    Flags f;
    for (const char* name : kSubcommands) {
        const std::string n = name;
        CLI::App* sub = app.add_subcommand(n, n == "dump-config" ? "print the effective config as JSON"
                                                                 : "run the " + n + " experiment");
        add_common(sub, f);
        if (n == "dump-config") {
            sub->add_option("experiment", f.experiment, "robustness | ood | transfer | verify")
                ->check(CLI::IsMember({"robustness", "ood", "transfer", "verify"}));
        } else {
            sub->add_option("--out", f.out, "output directory (default: config output_dir)");
            sub->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
            sub->add_flag("--quiet", f.quiet, "no progress lines on stderr");
        }
    }

    if (args.empty() ||
        std::none_of(kSubcommands.begin(), kSubcommands.end(), [&](const char* s) { return args.front() == s; })) {
        if (!args.empty() && (args.front() == "-h" || args.front() == "--help")) {
            out << usage(app);
            return kOk;
        }
        err << (args.empty() ? "missing subcommand" : "unknown subcommand '" + args.front() + "'") << "\n\n"
            << usage(app);
        return kUsage;
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << usage(*app.get_subcommands().front());
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    try {
        if (sub == "dump-config") {
            const runners::ExperimentConfig c = config::load_config(f.experiment, f.config, f.overrides);
            out << config::to_json(c).dump(2) << "\n";
            return kOk;
        }
        runners::ExperimentConfig c = config::load_config(sub, f.config, f.overrides);
        if (!f.out.empty()) c.output_dir = f.out;
        runners::RunOptions options;
        options.out_dir = c.output_dir;
        options.jobs = f.jobs;
        std::mutex lock;
        if (!f.quiet) {
            options.progress = [&](const std::string& line) {
                std::lock_guard<std::mutex> guard(lock);
                err << line << "\n";
            };
        }
        const runners::ExperimentResult result = runners::run_experiment(c, options);
        for (const auto& file : result.files) out << file.string() << "\n";
        if (!result.success) {
            err << "verification failed (see verify_report.csv)\n";
            return kVerifyFailed;
        }
        return kOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}

}  // namespace precondlab::cli
