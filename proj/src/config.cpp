#include "qbsde/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "qbsde/errors.hpp"

namespace qbsde {

namespace {

using Keys = std::set<std::string, std::less<>>;

void reject_unknown(const YAML::Node& node, const std::string& section, const Keys& allowed)
{
    if (!node.IsMap()) throw ConfigError(section + ": expected a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.contains(key)) throw ConfigError("unknown key '" + section + "." + key + "'");
    }
}

template <class T>
T read(const YAML::Node& node, const std::string& name)
{
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("invalid value for '" + name + "'");
    }
}

template <class T>
void optional(const YAML::Node& section, const std::string& prefix, const char* key, T& out)
{
    if (const auto n = section[key]) out = read<T>(n, prefix + "." + key);
}

template <class T>
T required(const YAML::Node& section, const std::string& prefix, const char* key)
{
    const auto n = section[key];
    if (!n) throw ConfigError("missing required key '" + prefix + "." + key + "'");
    return read<T>(n, prefix + "." + key);
}

std::size_t read_count(const YAML::Node& n, const std::string& name)
{
    const auto v = read<long long>(n, name);
    if (v < 0) throw ConfigError("'" + name + "' must be nonnegative");
    return static_cast<std::size_t>(v);
}

void optional_count(const YAML::Node& section, const std::string& prefix, const char* key, std::size_t& out)
{
    if (const auto n = section[key]) out = read_count(n, prefix + "." + key);
}

TimeFunction read_time_function(const YAML::Node& n, const std::string& name)
{
    if (n.IsScalar()) return TimeFunction(read<double>(n, name));
    reject_unknown(n, name, {"level", "amplitude", "frequency"});
    TimeFunction f;
    optional(n, name, "level", f.level);
    optional(n, name, "amplitude", f.amplitude);
    optional(n, name, "frequency", f.frequency);
    return f;
}

void optional_time_function(const YAML::Node& section, const std::string& prefix, const char* key, TimeFunction& out)
{
    if (const auto n = section[key]) out = read_time_function(n, prefix + "." + key);
}

template <class Parse>
auto read_enum(const YAML::Node& n, const std::string& name, Parse parse)
{
    const auto text = read<std::string>(n, name);
    try {
        return parse(text);
    } catch (const InvalidArgument& e) {
        throw ConfigError("'" + name + "': " + e.what());
    }
}

SupEstimator parse_sup(std::string_view s)
{
    if (s == "max") return SupEstimator::max;
    if (s == "quantile") return SupEstimator::quantile;
    throw InvalidArgument("unknown sup estimator '" + std::string(s) + "'");
}

void parse_generator(const YAML::Node& n, RunConfig& c)
{
    reject_unknown(n, "generator", {"family", "a", "b", "c", "gamma_q", "mu", "phi", "g", "sigma"});
    auto& gen = c.generator;
    if (const auto f = n["family"]) c.family = read_enum(f, "generator.family", parse_generator_family);
    optional_time_function(n, "generator", "a", gen.a);
    optional_time_function(n, "generator", "b", gen.b);
    optional_time_function(n, "generator", "c", gen.c);
    optional(n, "generator", "gamma_q", gen.gamma_q);
    optional(n, "generator", "mu", gen.mu);
    if (const auto p = n["phi"]) gen.phi = read_enum(p, "generator.phi", parse_nonlinearity);
    optional_time_function(n, "generator", "g", gen.g);
    optional_time_function(n, "generator", "sigma", gen.sigma);
}

void parse_terminal(const YAML::Node& n, TerminalCondition& tc)
{
    reject_unknown(n, "terminal", {"family", "scale", "offset", "load_w1", "load_w2", "coefficients", "clip"});
    const auto fam = n["family"];
    if (!fam) throw ConfigError("missing required key 'terminal.family'");
    tc.kind = read_enum(fam, "terminal.family", parse_terminal_kind);
    optional(n, "terminal", "scale", tc.scale);
    optional(n, "terminal", "offset", tc.offset);
    optional(n, "terminal", "load_w1", tc.load_w1);
    optional(n, "terminal", "load_w2", tc.load_w2);
    optional(n, "terminal", "coefficients", tc.coefficients);
    optional(n, "terminal", "clip", tc.clip);
}

void parse_grid(const YAML::Node& n, GridSpec& g)
{
    reject_unknown(n, "grid", {"T", "n_steps", "n_paths", "seed"});
    g.horizon = required<double>(n, "grid", "T");
    if (!n["n_steps"]) throw ConfigError("missing required key 'grid.n_steps'");
    if (!n["n_paths"]) throw ConfigError("missing required key 'grid.n_paths'");
    g.n_steps = read_count(n["n_steps"], "grid.n_steps");
    g.n_paths = read_count(n["n_paths"], "grid.n_paths");
    if (const auto s = n["seed"]) g.seed = read<std::uint64_t>(s, "grid.seed");
}

void parse_solver(const YAML::Node& n, RunConfig& c)
{
    reject_unknown(n, "solver",
                   {"tol", "max_iter", "degree", "use_w1", "use_w2", "standardize", "ridge_factor", "sup_estimator",
                    "quantile", "splitting_cap", "split_safety", "ess_floor", "normalize_weights", "ball_slack",
                    "contraction_slack", "shift_substeps"});
    auto& s = c.solve;
    optional(n, "solver", "tol", s.tol);
    optional_count(n, "solver", "max_iter", s.max_iter);
    optional(n, "solver", "degree", c.basis.degree);
    optional(n, "solver", "use_w1", c.basis.use_w1);
    optional(n, "solver", "use_w2", c.basis.use_w2);
    optional(n, "solver", "standardize", c.basis.standardize);
    optional(n, "solver", "ridge_factor", c.basis.ridge_factor);
    if (const auto e = n["sup_estimator"]) s.norms.sup = read_enum(e, "solver.sup_estimator", parse_sup);
    optional(n, "solver", "quantile", s.norms.quantile);
    optional_count(n, "solver", "splitting_cap", s.splitting_cap);
    optional(n, "solver", "split_safety", s.split_safety);
    optional(n, "solver", "ess_floor", s.weights.ess_floor);
    optional(n, "solver", "normalize_weights", s.weights.normalize);
    optional(n, "solver", "ball_slack", s.ball_slack);
    optional(n, "solver", "contraction_slack", s.contraction_slack);
    optional_count(n, "solver", "shift_substeps", s.shift_substeps);
}

void parse_output(const YAML::Node& n, OutputConfig& o)
{
    reject_unknown(n, "output", {"directory", "formats", "csv_paths"});
    optional(n, "output", "directory", o.directory);
    if (const auto f = n["formats"]) {
        const auto list = read<std::vector<std::string>>(f, "output.formats");
        o.json = o.csv = false;
        for (const auto& fmt : list) {
            if (fmt == "json") o.json = true;
            else if (fmt == "csv") o.csv = true;
            else throw ConfigError("'output.formats': unknown format '" + fmt + "'");
        }
    }
    optional_count(n, "output", "csv_paths", o.csv_paths);
}

void emit_time_function(YAML::Emitter& out, const char* key, const TimeFunction& f)
{
    out << YAML::Key << key << YAML::Value;
    if (f.amplitude == 0.0 && f.frequency == 0.0) {
        out << f.level;
        return;
    }
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "level" << YAML::Value << f.level << YAML::Key << "amplitude"
        << YAML::Value << f.amplitude << YAML::Key << "frequency" << YAML::Value << f.frequency << YAML::EndMap;
}

bool constant_in_time(const TimeFunction& f) { return f.is_constant(); }

} // namespace

std::string_view to_string(GeneratorFamily family)
{
    switch (family) {
    case GeneratorFamily::general: return "general";
    case GeneratorFamily::quadratic: return "quadratic";
    case GeneratorFamily::linear: return "linear";
    case GeneratorFamily::orthogonal: return "orthogonal";
    }
    return "general";
}

GeneratorFamily parse_generator_family(std::string_view name)
{
    if (name == "general") return GeneratorFamily::general;
    if (name == "quadratic") return GeneratorFamily::quadratic;
    if (name == "linear") return GeneratorFamily::linear;
    if (name == "orthogonal") return GeneratorFamily::orthogonal;
    throw InvalidArgument("unknown generator family '" + std::string(name) + "'");
}

void RunConfig::validate() const
{
    try {
        grid.validate();
        generator.validate();
        generator.terminal.validate();
        basis.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    if (!(solve.tol >= 0.0)) throw ConfigError("'solver.tol' must be nonnegative");
    if (solve.max_iter == 0) throw ConfigError("'solver.max_iter' must be positive");
    if (solve.splitting_cap == 0) throw ConfigError("'solver.splitting_cap' must be positive");
    if (!(solve.split_safety > 0.0 && solve.split_safety <= 1.0))
        throw ConfigError("'solver.split_safety' must lie in (0, 1]");
    if (!(solve.norms.quantile > 0.0 && solve.norms.quantile <= 1.0))
        throw ConfigError("'solver.quantile' must lie in (0, 1]");
    if (!(solve.weights.ess_floor >= 0.0 && solve.weights.ess_floor <= 1.0))
        throw ConfigError("'solver.ess_floor' must lie in [0, 1]");

    const auto& g = generator;
    const bool no_phi = g.mu == 0.0 || g.phi == Nonlinearity::none;
    const auto need = [&](bool ok, const char* what) {
        if (!ok) throw ConfigError(std::string("generator.family '") + std::string(to_string(family)) + "': " + what);
    };
    switch (family) {
    case GeneratorFamily::general: break;
    case GeneratorFamily::quadratic:
        need(g.gamma_q != 0.0, "gamma_q must be nonzero");
        need(g.a.is_zero() && g.b.is_zero() && g.c.is_zero() && no_phi && g.g.is_zero(),
             "only gamma_q may be nonzero");
        break;
    case GeneratorFamily::linear:
        need(g.gamma_q == 0.0 && g.c.is_zero() && no_phi && g.g.is_zero(), "only a and b may be nonzero");
        need(constant_in_time(g.a) && constant_in_time(g.b), "a and b must be constant");
        break;
    case GeneratorFamily::orthogonal:
        need(g.a.is_zero() && g.b.is_zero() && g.c.is_zero() && g.gamma_q == 0.0 && no_phi, "f must vanish");
        need(constant_in_time(g.g) && !g.g.is_zero(), "g must be a nonzero constant");
        need(!g.terminal.depends_on_w1(), "the terminal condition must depend on W2 only");
        break;
    }
}

RunConfig parse_config(std::string_view yaml)
{
    YAML::Node root;
    try {
        root = YAML::Load(std::string(yaml));
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("malformed YAML: ") + e.what());
    }
    if (!root.IsMap()) throw ConfigError("configuration must be a mapping");
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        if (key != "generator" && key != "terminal" && key != "grid" && key != "solver" && key != "output")
            throw ConfigError("unknown key '" + key + "'");
    }

    RunConfig c;
    if (const auto n = root["generator"]) parse_generator(n, c);
    if (!root["terminal"]) throw ConfigError("missing required key 'terminal.family'");
    parse_terminal(root["terminal"], c.generator.terminal);
    if (!root["grid"]) throw ConfigError("missing required key 'grid.T'");
    parse_grid(root["grid"], c.grid);
    if (const auto n = root["solver"]) parse_solver(n, c);
    if (const auto n = root["output"]) parse_output(n, c.output);
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read configuration '" + file.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string emit_config(const RunConfig& c)
{
    const auto& g = c.generator;
    const auto& tc = g.terminal;
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap;

    out << YAML::Key << "generator" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "family" << YAML::Value << std::string(to_string(c.family));
    emit_time_function(out, "a", g.a);
    emit_time_function(out, "b", g.b);
    emit_time_function(out, "c", g.c);
    out << YAML::Key << "gamma_q" << YAML::Value << g.gamma_q;
    out << YAML::Key << "mu" << YAML::Value << g.mu;
    out << YAML::Key << "phi" << YAML::Value << std::string(to_string(g.phi));
    emit_time_function(out, "g", g.g);
    emit_time_function(out, "sigma", g.sigma);
    out << YAML::EndMap;

    out << YAML::Key << "terminal" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "family" << YAML::Value << std::string(to_string(tc.kind));
    out << YAML::Key << "scale" << YAML::Value << tc.scale;
    out << YAML::Key << "offset" << YAML::Value << tc.offset;
    out << YAML::Key << "load_w1" << YAML::Value << tc.load_w1;
    out << YAML::Key << "load_w2" << YAML::Value << tc.load_w2;
    out << YAML::Key << "coefficients" << YAML::Value << YAML::Flow << tc.coefficients;
    out << YAML::Key << "clip" << YAML::Value << tc.clip;
    out << YAML::EndMap;

    out << YAML::Key << "grid" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "T" << YAML::Value << c.grid.horizon;
    out << YAML::Key << "n_steps" << YAML::Value << c.grid.n_steps;
    out << YAML::Key << "n_paths" << YAML::Value << c.grid.n_paths;
    out << YAML::Key << "seed" << YAML::Value << c.grid.seed;
    out << YAML::EndMap;

    const auto& s = c.solve;
    out << YAML::Key << "solver" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "tol" << YAML::Value << s.tol;
    out << YAML::Key << "max_iter" << YAML::Value << s.max_iter;
    out << YAML::Key << "degree" << YAML::Value << c.basis.degree;
    out << YAML::Key << "use_w1" << YAML::Value << c.basis.use_w1;
    out << YAML::Key << "use_w2" << YAML::Value << c.basis.use_w2;
    out << YAML::Key << "standardize" << YAML::Value << c.basis.standardize;
    out << YAML::Key << "ridge_factor" << YAML::Value << c.basis.ridge_factor;
    out << YAML::Key << "sup_estimator" << YAML::Value
        << (s.norms.sup == SupEstimator::max ? "max" : "quantile");
    out << YAML::Key << "quantile" << YAML::Value << s.norms.quantile;
    out << YAML::Key << "splitting_cap" << YAML::Value << s.splitting_cap;
    out << YAML::Key << "split_safety" << YAML::Value << s.split_safety;
    out << YAML::Key << "ess_floor" << YAML::Value << s.weights.ess_floor;
    out << YAML::Key << "normalize_weights" << YAML::Value << s.weights.normalize;
    out << YAML::Key << "ball_slack" << YAML::Value << s.ball_slack;
    out << YAML::Key << "contraction_slack" << YAML::Value << s.contraction_slack;
    out << YAML::Key << "shift_substeps" << YAML::Value << s.shift_substeps;
    out << YAML::EndMap;

    out << YAML::Key << "output" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "directory" << YAML::Value << c.output.directory;
    out << YAML::Key << "formats" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    if (c.output.json) out << "json";
    if (c.output.csv) out << "csv";
    out << YAML::EndSeq;
    out << YAML::Key << "csv_paths" << YAML::Value << c.output.csv_paths;
    out << YAML::EndMap;

    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

} // namespace qbsde
