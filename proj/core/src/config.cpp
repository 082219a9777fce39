#include "precondlab/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "precondlab/data.hpp"
#include "precondlab/errors.hpp"
#include "precondlab/optim.hpp"

namespace precondlab::config {

namespace {

std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

const Json& field(const Json& j, const char* key, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError("missing key '" + join(path, key) + "'");
    return *it;
}

double get_double(const Json& j, const char* key, const std::string& path) {
    const Json& v = field(j, key, path);
    if (!v.is_number()) throw ConfigError("'" + join(path, key) + "' must be a number");
    return v.get<double>();
}

long long get_integer(const Json& j, const char* key, const std::string& path) {
    const Json& v = field(j, key, path);
    if (!v.is_number_integer()) throw ConfigError("'" + join(path, key) + "' must be an integer");
    return v.get<long long>();
}

int get_int(const Json& j, const char* key, const std::string& path) {
    const long long v = get_integer(j, key, path);
    if (v < -2147483647LL || v > 2147483647LL) {
        throw ConfigError("'" + join(path, key) + "' is out of range");
    }
    return static_cast<int>(v);
}

bool get_bool(const Json& j, const char* key, const std::string& path) {
    const Json& v = field(j, key, path);
    if (!v.is_boolean()) throw ConfigError("'" + join(path, key) + "' must be true or false");
    return v.get<bool>();
}

std::string get_string(const Json& j, const char* key, const std::string& path) {
    const Json& v = field(j, key, path);
    if (!v.is_string()) throw ConfigError("'" + join(path, key) + "' must be a string");
    return v.get<std::string>();
}

const Json& get_array(const Json& j, const char* key, const std::string& path) {
    const Json& v = field(j, key, path);
    if (!v.is_array()) throw ConfigError("'" + join(path, key) + "' must be an array");
    return v;
}

std::vector<double> get_doubles(const Json& j, const char* key, const std::string& path) {
    std::vector<double> out;
    for (const auto& e : get_array(j, key, path)) {
        if (!e.is_number()) throw ConfigError("'" + join(path, key) + "' must hold numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

std::vector<int> get_ints(const Json& j, const char* key, const std::string& path) {
    std::vector<int> out;
    for (const auto& e : get_array(j, key, path)) {
        if (!e.is_number_integer()) throw ConfigError("'" + join(path, key) + "' must hold integers");
        out.push_back(e.get<int>());
    }
    return out;
}

std::vector<std::string> get_strings(const Json& j, const char* key, const std::string& path) {
    std::vector<std::string> out;
    for (const auto& e : get_array(j, key, path)) {
        if (!e.is_string()) throw ConfigError("'" + join(path, key) + "' must hold strings");
        out.push_back(e.get<std::string>());
    }
    return out;
}

const Json& section(const Json& j, const char* key, const std::string& path) {
    const Json& v = field(j, key, path);
    if (!v.is_object()) throw ConfigError("'" + join(path, key) + "' must be an object");
    return v;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void ExperimentConfig::validate() const {
    require(experiment == "robustness" || experiment == "ood" || experiment == "transfer" ||
                experiment == "verify",
            "experiment must be one of robustness, ood, transfer, verify (got '" + experiment + "')");
    require(steps >= 0, "steps must be >= 0");
    require(log_every > 0, "log_every must be > 0");
    require(!seeds.empty(), "seeds must not be empty");
    {
        std::vector<int> sorted = seeds;
        std::sort(sorted.begin(), sorted.end());
        require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "seeds must be distinct");
    }
    require(lr > 0.0 && std::isfinite(lr), "lr must be > 0");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
    require(d_x >= 1 && d_h >= 1, "d_x and d_h must be >= 1");
    require(n_train >= 2 && n_test >= 1, "n_train must be >= 2 and n_test >= 1");
    require(lambda > 0.0, "lambda must be > 0");
    require(init_preact_var > 0.0, "init_preact_var must be > 0");
    require(eigen_floor >= 0.0, "eigen_floor must be >= 0");
    require(divergence_threshold > 0.0, "divergence_threshold must be > 0");
    require(sam_rho > 0.0, "sam_rho must be > 0");
    require(all_finite(p_list), "p_list must be finite");

    for (const auto& c : cases) data::case_from_string(c);
    for (const auto& d : transfer.directions) data::direction_from_string(d);
    for (const auto& k : preconditioners) {
        require(k == "cov_power" || k == "adahessian",
                "preconditioners may only contain cov_power and adahessian (got '" + k + "')");
    }
    for (const auto& k : ood.optimizers) {
        const optim::Kind kind = optim::kind_from_string(k);
        require(kind != optim::Kind::cov_power, "ood.optimizers does not support cov_power");
    }

    require(adahessian.beta1 >= 0.0 && adahessian.beta1 < 1.0, "adahessian.beta1 must lie in [0, 1)");
    require(adahessian.beta2 >= 0.0 && adahessian.beta2 < 1.0, "adahessian.beta2 must lie in [0, 1)");
    require(adahessian.eps > 0.0, "adahessian.eps must be > 0");
    require(adahessian.hutchinson_samples >= 1, "adahessian.hutchinson_samples must be >= 1");
    require(adahessian.hessian_interval >= 1, "adahessian.hessian_interval must be >= 1");
    require(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "adam.beta1 must lie in [0, 1)");
    require(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "adam.beta2 must lie in [0, 1)");
    require(adam.eps > 0.0, "adam.eps must be > 0");

    if (experiment == "robustness") {
        require(!cases.empty() && !preconditioners.empty() && !p_list.empty() && !snr_list.empty(),
                "robustness needs non-empty cases, preconditioners, p_list and snr_list");
        for (double s : snr_list) require(s > 0.0, "snr_list entries must be > 0");
    }
    if (experiment == "transfer") {
        require(!transfer.directions.empty() && !preconditioners.empty() && !p_list.empty(),
                "transfer needs non-empty directions, preconditioners and p_list");
        require(d_x % 2 == 0, "transfer needs an even d_x");
        require(transfer.snr > 0.0, "transfer.snr must be > 0");
        require(transfer.n_val >= 1, "transfer.n_val must be >= 1");
        for (double l : transfer.ridge_grid) require(l >= 0.0, "transfer.ridge_grid entries must be >= 0");
    }
    if (experiment == "ood") {
        require(!ood.optimizers.empty(), "ood.optimizers must not be empty");
        require(ood.sigma_n >= 0.0, "ood.sigma_n must be >= 0");
        require(ood.n_val >= 1 && ood.n_test >= 1, "ood.n_val and ood.n_test must be >= 1");
        require(!ood.lr_grid.empty(), "ood.lr_grid must not be empty");
        for (double l : ood.lr_grid) require(l > 0.0, "ood.lr_grid entries must be > 0");
        for (double r : ood.rho_grid) require(r > 0.0, "ood.rho_grid entries must be > 0");
        require(ood.tune_seeds >= 0, "ood.tune_seeds must be >= 0");
        const bool has_ada = std::find(ood.optimizers.begin(), ood.optimizers.end(), "adahessian") !=
                             ood.optimizers.end();
        require(!has_ada || !ood.adahessian_p.empty(), "ood.adahessian_p must not be empty");
        require(all_finite(ood.adahessian_p), "ood.adahessian_p must be finite");
    }
    if (experiment == "verify") {
        require(verify.d_x >= 1 && verify.d_h >= 1 && verify.n >= verify.d_x,
                "verify needs d_x >= 1, d_h >= 1 and n >= d_x");
        require(verify.steps >= 0 && verify.lr > 0.0, "verify.steps must be >= 0 and verify.lr > 0");
        require(verify.identity_instances >= 1 && verify.hessian_instances >= 1 &&
                    verify.gradient_instances >= 1,
                "verify instance counts must be >= 1");
    }
}

ExperimentConfig default_config(std::string_view experiment) {
    ExperimentConfig c;
    c.experiment = std::string(experiment);
    if (experiment == "robustness" || experiment == "verify") {
        // struct defaults
    } else if (experiment == "transfer") {
        c.cases = {};
        c.snr_list = {};
    } else if (experiment == "ood") {
        c.cases = {};
        c.preconditioners = {};
        c.p_list = {};
        c.snr_list = {};
        c.seeds = {0, 1, 2, 3, 4};
        c.steps = 3000;
        c.log_every = 100;
        c.d_x = 784;
        c.n_train = 2000;
        c.n_test = 2000;
        c.standardize_labels = false;
    } else {
        throw ConfigError("unknown experiment '" + std::string(experiment) + "'");
    }
    return c;
}

Json to_json(const ExperimentConfig& c) {
    Json j;
    j["experiment"] = c.experiment;
    j["cases"] = c.cases;
    j["preconditioners"] = c.preconditioners;
    j["p_list"] = c.p_list;
    j["snr_list"] = c.snr_list;
    j["seeds"] = c.seeds;
    j["steps"] = c.steps;
    j["log_every"] = c.log_every;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["d_x"] = c.d_x;
    j["d_h"] = c.d_h;
    j["n_train"] = c.n_train;
    j["n_test"] = c.n_test;
    j["lambda"] = c.lambda;
    j["init_preact_var"] = c.init_preact_var;
    j["standardize_labels"] = c.standardize_labels;
    j["eigen_floor"] = c.eigen_floor;
    j["divergence_threshold"] = c.divergence_threshold;
    j["sam_rho"] = c.sam_rho;
    j["adahessian"] = {
        {"beta1", c.adahessian.beta1},
        {"beta2", c.adahessian.beta2},
        {"eps", c.adahessian.eps},
        {"hutchinson_samples", c.adahessian.hutchinson_samples},
        {"hessian_interval", c.adahessian.hessian_interval},
        {"precondition_readout", c.adahessian.precondition_readout},
    };
    j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
    j["transfer"] = {
        {"directions", c.transfer.directions},
        {"snr", c.transfer.snr},
        {"n_val", c.transfer.n_val},
        {"ridge_grid", c.transfer.ridge_grid},
    };
    j["ood"] = {
        {"mnist_images", c.ood.mnist_images},
        {"mnist_labels", c.ood.mnist_labels},
        {"sigma_n", c.ood.sigma_n},
        {"n_val", c.ood.n_val},
        {"n_test", c.ood.n_test},
        {"optimizers", c.ood.optimizers},
        {"adahessian_p", c.ood.adahessian_p},
        {"lr_grid", c.ood.lr_grid},
        {"rho_grid", c.ood.rho_grid},
        {"tune_seeds", c.ood.tune_seeds},
    };
    j["verify"] = {
        {"invariance_p", c.verify.invariance_p},
        {"identity_p", c.verify.identity_p},
        {"d_x", c.verify.d_x},
        {"d_h", c.verify.d_h},
        {"n", c.verify.n},
        {"steps", c.verify.steps},
        {"lr", c.verify.lr},
        {"identity_instances", c.verify.identity_instances},
        {"hessian_instances", c.verify.hessian_instances},
        {"gradient_instances", c.verify.gradient_instances},
        {"seed", c.verify.seed},
    };
    j["output_dir"] = c.output_dir;
    return j;
}

ExperimentConfig from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    const std::string root;
    c.experiment = get_string(j, "experiment", root);
    c.cases = get_strings(j, "cases", root);
    c.preconditioners = get_strings(j, "preconditioners", root);
    c.p_list = get_doubles(j, "p_list", root);
    c.snr_list = get_doubles(j, "snr_list", root);
    c.seeds = get_ints(j, "seeds", root);
    c.steps = get_int(j, "steps", root);
    c.log_every = get_int(j, "log_every", root);
    c.lr = get_double(j, "lr", root);
    c.weight_decay = get_double(j, "weight_decay", root);
    c.d_x = get_int(j, "d_x", root);
    c.d_h = get_int(j, "d_h", root);
    c.n_train = get_int(j, "n_train", root);
    c.n_test = get_int(j, "n_test", root);
    c.lambda = get_double(j, "lambda", root);
    c.init_preact_var = get_double(j, "init_preact_var", root);
    c.standardize_labels = get_bool(j, "standardize_labels", root);
    c.eigen_floor = get_double(j, "eigen_floor", root);
    c.divergence_threshold = get_double(j, "divergence_threshold", root);
    c.sam_rho = get_double(j, "sam_rho", root);

    const Json& ah = section(j, "adahessian", root);
    c.adahessian.beta1 = get_double(ah, "beta1", "adahessian");
    c.adahessian.beta2 = get_double(ah, "beta2", "adahessian");
    c.adahessian.eps = get_double(ah, "eps", "adahessian");
    c.adahessian.hutchinson_samples = get_int(ah, "hutchinson_samples", "adahessian");
    c.adahessian.hessian_interval = get_int(ah, "hessian_interval", "adahessian");
    c.adahessian.precondition_readout = get_bool(ah, "precondition_readout", "adahessian");

    const Json& ad = section(j, "adam", root);
    c.adam.beta1 = get_double(ad, "beta1", "adam");
    c.adam.beta2 = get_double(ad, "beta2", "adam");
    c.adam.eps = get_double(ad, "eps", "adam");

    const Json& tr = section(j, "transfer", root);
    c.transfer.directions = get_strings(tr, "directions", "transfer");
    c.transfer.snr = get_double(tr, "snr", "transfer");
    c.transfer.n_val = get_int(tr, "n_val", "transfer");
    c.transfer.ridge_grid = get_doubles(tr, "ridge_grid", "transfer");

    const Json& od = section(j, "ood", root);
    c.ood.mnist_images = get_string(od, "mnist_images", "ood");
    c.ood.mnist_labels = get_string(od, "mnist_labels", "ood");
    c.ood.sigma_n = get_double(od, "sigma_n", "ood");
    c.ood.n_val = get_int(od, "n_val", "ood");
    c.ood.n_test = get_int(od, "n_test", "ood");
    c.ood.optimizers = get_strings(od, "optimizers", "ood");
    c.ood.adahessian_p = get_doubles(od, "adahessian_p", "ood");
    c.ood.lr_grid = get_doubles(od, "lr_grid", "ood");
    c.ood.rho_grid = get_doubles(od, "rho_grid", "ood");
    c.ood.tune_seeds = get_int(od, "tune_seeds", "ood");

    const Json& vf = section(j, "verify", root);
    c.verify.invariance_p = get_doubles(vf, "invariance_p", "verify");
    c.verify.identity_p = get_doubles(vf, "identity_p", "verify");
    c.verify.d_x = get_int(vf, "d_x", "verify");
    c.verify.d_h = get_int(vf, "d_h", "verify");
    c.verify.n = get_int(vf, "n", "verify");
    c.verify.steps = get_int(vf, "steps", "verify");
    c.verify.lr = get_double(vf, "lr", "verify");
    c.verify.identity_instances = get_int(vf, "identity_instances", "verify");
    c.verify.hessian_instances = get_int(vf, "hessian_instances", "verify");
    c.verify.gradient_instances = get_int(vf, "gradient_instances", "verify");
    {
        const long long s = get_integer(vf, "seed", "verify");
        if (s < 0) throw ConfigError("'verify.seed' must be >= 0");
        c.verify.seed = static_cast<unsigned long long>(s);
    }

    c.output_dir = get_string(j, "output_dir", root);
    const Json known = to_json(ExperimentConfig{});
    for (const auto& item : j.items()) {
        if (!known.contains(item.key())) throw ConfigError("unknown key '" + item.key() + "'");
    }
    return c;
}

Json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        // e.byte is 1-based and points just past the offending character.
        const std::size_t byte = e.byte == 0 ? 0 : e.byte - 1;
        std::size_t line = 1;
        std::size_t column = 1;
        for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                column = 1;
            } else {
                ++column;
            }
        }
        std::ostringstream msg;
        msg << origin << ":" << line << ":" << column << ": malformed JSON: " << e.what();
        throw ConfigError(msg.str());
    }
}

void merge_strict(Json& base, const Json& patch, const std::string& path) {
    if (!patch.is_object()) {
        throw ConfigError(path.empty() ? "config must be a JSON object"
                                       : "'" + path + "' must be an object");
    }
    for (const auto& [key, value] : patch.items()) {
        const std::string where = join(path, key);
        auto it = base.find(key);
        if (it == base.end()) throw ConfigError("unknown key '" + where + "'");
        if (it->is_object()) {
            merge_strict(*it, value, where);
        } else {
            *it = value;
        }
    }
}

void apply_override(Json& base, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    Json value = Json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    Json patch = value;
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) {
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        parts.push_back(part);
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        Json wrapped = Json::object();
        wrapped[*it] = std::move(patch);
        patch = std::move(wrapped);
    }
    merge_strict(base, patch);
}

ExperimentConfig load_config(std::string_view experiment, const std::string& config_path,
                             const std::vector<std::string>& overrides) {
    Json file;
    if (!config_path.empty()) {
        std::ifstream in(config_path, std::ios::binary);
        if (!in) throw ConfigError("cannot open config file '" + config_path + "'");
        std::ostringstream text;
        text << in.rdbuf();
        file = parse_json_text(text.str(), config_path);
        if (!file.is_object()) throw ConfigError(config_path + ": config must be a JSON object");
    }

    std::string tag(experiment);
    if (file.is_object() && file.contains("experiment")) {
        if (!file["experiment"].is_string()) throw ConfigError("'experiment' must be a string");
        const std::string in_file = file["experiment"].get<std::string>();
        if (tag.empty()) {
            tag = in_file;
        } else if (in_file != tag) {
            throw ConfigError("config file is for experiment '" + in_file + "' but '" + tag + "' was requested");
        }
    }
    if (tag.empty()) tag = "robustness";

    Json merged = to_json(default_config(tag));
    if (file.is_object()) merge_strict(merged, file);
    for (const auto& o : overrides) apply_override(merged, o);
    if (merged["experiment"] != tag) {
        throw ConfigError("'experiment' cannot be changed to '" + merged["experiment"].dump() + "' here");
    }
    ExperimentConfig config = from_json(merged);
    config.validate();
    return config;
}

}  // namespace precondlab::config
