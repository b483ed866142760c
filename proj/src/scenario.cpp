#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "mflb/harness.hpp"

namespace mflb::harness {

using json = nlohmann::json;

namespace {

// Strict reader over one JSON object: every key must be declared up front.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path, std::initializer_list<std::string_view> keys)
        : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail("expected an object");
        std::set<std::string_view> allowed(keys.begin(), keys.end());
        for (const auto& [k, v] : j_.items())
            if (!allowed.count(k)) throw ScenarioError("scenario: unknown key '" + k + "' " + where());
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    const json& at(const std::string& key) const {
        if (!j_.contains(key)) throw ScenarioError("scenario: missing required key '" + key + "' " + where());
        return j_.at(key);
    }
    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    double number(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        return as_number(j_.at(key), child(key));
    }
    double required_number(const std::string& key) const { return as_number(at(key), child(key)); }
    long long integer(const std::string& key, long long fallback) const {
        if (!has(key)) return fallback;
        return as_integer(j_.at(key), child(key));
    }
    bool boolean(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        if (!j_.at(key).is_boolean()) throw ScenarioError("scenario: '" + child(key) + "' must be true or false");
        return j_.at(key).get<bool>();
    }
    std::string string(const std::string& key, const std::string& fallback) const {
        if (!has(key)) return fallback;
        if (!j_.at(key).is_string()) throw ScenarioError("scenario: '" + child(key) + "' must be a string");
        return j_.at(key).get<std::string>();
    }

    static double as_number(const json& v, const std::string& path) {
        if (!v.is_number()) throw ScenarioError("scenario: '" + path + "' must be a number");
        return v.get<double>();
    }
    static long long as_integer(const json& v, const std::string& path) {
        if (!v.is_number_integer()) throw ScenarioError("scenario: '" + path + "' must be an integer");
        return v.get<long long>();
    }

private:
    std::string where() const { return path_.empty() ? "at top level" : "in '" + path_ + "'"; }
    [[noreturn]] void fail(const std::string& msg) const {
        throw ScenarioError("scenario: " + (path_.empty() ? std::string("document") : "'" + path_ + "'") + ": " + msg);
    }

    const json& j_;
    std::string path_;
};

qsim::Resources read_resources(const json& j, const std::string& path) {
    ObjectReader r(j, path, {"cpu", "mem", "disk"});
    return {r.required_number("cpu"), r.required_number("mem"), r.required_number("disk")};
}

int class_key(const std::string& key, const std::string& path) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ScenarioError("scenario: '" + path + "' keys must be class ids, got '" + key + "'");
    }
}

json resources_json(const qsim::Resources& r) { return json{{"cpu", r.cpu}, {"mem", r.mem}, {"disk", r.disk}}; }

}  // namespace

std::optional<Algorithm> parse_algorithm(std::string_view name) {
    if (name == "multifractal") return Algorithm::multifractal;
    if (name == "round_robin") return Algorithm::round_robin;
    if (name == "least_loaded") return Algorithm::least_loaded;
    if (name == "weighted_random") return Algorithm::weighted_random;
    return std::nullopt;
}

std::string_view to_string(Algorithm a) {
    switch (a) {
        case Algorithm::multifractal: return "multifractal";
        case Algorithm::round_robin: return "round_robin";
        case Algorithm::least_loaded: return "least_loaded";
        case Algorithm::weighted_random: return "weighted_random";
    }
    return "unknown";
}

std::string_view to_string(TrafficModel m) {
    switch (m) {
        case TrafficModel::constant: return "constant";
        case TrafficModel::fgn: return "fgn";
        case TrafficModel::cascade: return "cascade";
    }
    return "unknown";
}

std::vector<int> Scenario::class_ids() const {
    std::vector<int> ids;
    for (const auto& f : flows) ids.push_back(f.spec.class_id);
    return ids;
}

void Scenario::validate() const {
    auto fail = [](const std::string& msg) { throw ScenarioError("scenario invariant violated: " + msg); };
    if (servers.empty()) fail("at least one server is required");
    if (flows.empty()) fail("at least one flow is required");
    try {
        window.validate();
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
    if (!(dt > 0.0)) fail("dt > 0");
    if (!(duration > 0.0)) fail("duration > 0");
    if (duration < static_cast<double>(window.length) * dt) fail("duration >= window.T * dt");
    if (!(alpha > 0.0 && alpha <= 1.0)) fail("0 < alpha <= 1");
    if (!(gamma >= 0.0)) fail("gamma >= 0");
    if (!(eps > 0.0 && eps < 1.0)) fail("0 < eps < 1");
    try {
        eject.validate();
        for (const auto& s : servers) s.validate();
        for (const auto& f : flows) f.spec.validate();
        if (mfdfa) {
            mfdfa->validate(window.length);
        } else {
            mfa::MfdfaConfig::defaults(window.length);
        }
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
    std::set<int> ids;
    for (const auto& f : flows) {
        if (!ids.insert(f.spec.class_id).second) fail("flow class ids are unique (class " + std::to_string(f.spec.class_id) + ")");
        if (f.model == TrafficModel::fgn && !(f.sigma > 0.0)) fail("fgn sigma > 0");
        for (const auto& step : f.rate_changes)
            if (!(step.factor >= 0.0) || !(step.at >= 0.0)) fail("rate change at >= 0 and factor >= 0");
        for (const auto& s : servers)
            if (!s.service_rate.count(f.spec.class_id))
                fail("server " + std::to_string(s.id) + " defines a service rate for class " + std::to_string(f.spec.class_id));
    }
    std::set<int> server_ids;
    for (const auto& s : servers)
        if (!server_ids.insert(s.id).second) fail("server ids are unique (server " + std::to_string(s.id) + ")");
}

Scenario parse_scenario(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t limit = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
        for (std::size_t i = 0; i < limit; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ScenarioError("scenario parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                            ": " + e.what());
    }

    ObjectReader top(doc, "", {"servers", "flows", "algorithm", "window", "mfdfa", "eject", "preemptive", "duration", "dt",
                               "seed", "balancer"});
    Scenario s;

    const auto algo = top.string("algorithm", "multifractal");
    if (auto a = parse_algorithm(algo)) {
        s.algorithm = *a;
    } else {
        throw ScenarioError("scenario: 'algorithm' must be one of multifractal, round_robin, least_loaded, weighted_random; got '" +
                            algo + "'");
    }

    if (top.has("window")) {
        ObjectReader w(top.at("window"), "window", {"T", "shift"});
        const auto T = w.integer("T", 256);
        const auto shift = w.integer("shift", 64);
        if (T <= 0 || shift <= 0) throw ScenarioError("scenario invariant violated: window T and shift must be > 0");
        s.window = {static_cast<std::size_t>(T), static_cast<std::size_t>(shift)};
    }
    s.dt = top.number("dt", 1.0);
    s.duration = top.number("duration", 4.0 * static_cast<double>(s.window.length) * s.dt);
    const auto seed = top.integer("seed", 0);
    if (seed < 0) throw ScenarioError("scenario: 'seed' must be >= 0");
    s.seed = static_cast<std::uint64_t>(seed);
    s.preemptive = top.boolean("preemptive", true);

    if (top.has("balancer")) {
        ObjectReader b(top.at("balancer"), "balancer", {"alpha", "gamma", "eps"});
        s.alpha = b.number("alpha", s.alpha);
        s.gamma = b.number("gamma", s.gamma);
        s.eps = b.number("eps", s.eps);
    }

    if (top.has("eject")) {
        ObjectReader e(top.at("eject"), "eject", {"beta", "displaced_fate"});
        s.eject.beta = e.number("beta", 1.0);
        const auto fate = e.string("displaced_fate", "requeue");
        if (fate == "requeue") {
            s.eject.displaced_fate = qsim::DisplacedFate::requeue;
        } else if (fate == "drop") {
            s.eject.displaced_fate = qsim::DisplacedFate::drop;
        } else {
            throw ScenarioError("scenario: 'eject.displaced_fate' must be requeue or drop; got '" + fate + "'");
        }
    }

    if (top.has("mfdfa")) {
        ObjectReader m(top.at("mfdfa"), "mfdfa", {"q", "scales", "order"});
        mfa::MfdfaConfig cfg = mfa::MfdfaConfig::defaults(std::max<std::size_t>(s.window.length, 64));
        if (m.has("q")) {
            cfg.q_grid.clear();
            if (!m.at("q").is_array()) throw ScenarioError("scenario: 'mfdfa.q' must be an array");
            for (const auto& v : m.at("q")) cfg.q_grid.push_back(ObjectReader::as_number(v, "mfdfa.q"));
        }
        if (m.has("scales")) {
            cfg.scales.clear();
            if (!m.at("scales").is_array()) throw ScenarioError("scenario: 'mfdfa.scales' must be an array");
            for (const auto& v : m.at("scales")) {
                const auto sc = ObjectReader::as_integer(v, "mfdfa.scales");
                if (sc <= 0) throw ScenarioError("scenario: 'mfdfa.scales' entries must be > 0");
                cfg.scales.push_back(static_cast<std::size_t>(sc));
            }
        } else {
            cfg.scales = mfa::default_scale_grid(s.window.length);
        }
        cfg.order = static_cast<int>(m.integer("order", 1));
        s.mfdfa = cfg;
    }

    const json& flows = top.at("flows");
    if (!flows.is_array()) throw ScenarioError("scenario: 'flows' must be an array");
    for (std::size_t i = 0; i < flows.size(); ++i) {
        const std::string path = "flows[" + std::to_string(i) + "]";
        ObjectReader f(flows[i], path, {"class", "priority", "rate", "model", "hurst", "cascade_weight", "sigma", "randomize",
                                        "mean_size", "lifetime", "rate_changes"});
        FlowConfig fc;
        fc.spec.class_id = static_cast<int>(f.integer("class", static_cast<long long>(i) + 1));
        fc.spec.priority = static_cast<int>(f.integer("priority", 0));
        fc.spec.base_rate = f.required_number("rate");
        fc.spec.hurst = f.number("hurst", 0.7);
        fc.spec.cascade_weight = f.number("cascade_weight", 0.75);
        fc.spec.mean_size = f.number("mean_size", 1.0);
        fc.spec.lifetime = f.number("lifetime", std::numeric_limits<double>::infinity());
        fc.sigma = f.number("sigma", 0.2);
        fc.randomize = f.boolean("randomize", true);
        const auto model = f.string("model", "cascade");
        if (model == "constant") {
            fc.model = TrafficModel::constant;
        } else if (model == "fgn") {
            fc.model = TrafficModel::fgn;
        } else if (model == "cascade") {
            fc.model = TrafficModel::cascade;
        } else {
            throw ScenarioError("scenario: '" + path + ".model' must be constant, fgn or cascade; got '" + model + "'");
        }
        if (f.has("rate_changes")) {
            const json& rc = f.at("rate_changes");
            if (!rc.is_array()) throw ScenarioError("scenario: '" + path + ".rate_changes' must be an array");
            for (std::size_t k = 0; k < rc.size(); ++k) {
                ObjectReader step(rc[k], path + ".rate_changes[" + std::to_string(k) + "]", {"at", "factor"});
                fc.rate_changes.push_back({step.required_number("at"), step.required_number("factor")});
            }
        }
        s.flows.push_back(std::move(fc));
    }

    const json& servers = top.at("servers");
    if (!servers.is_array()) throw ScenarioError("scenario: 'servers' must be an array");
    for (std::size_t i = 0; i < servers.size(); ++i) {
        const std::string path = "servers[" + std::to_string(i) + "]";
        ObjectReader r(servers[i], path, {"id", "channels", "buffer", "service_rate", "capacity", "demand_per_work"});
        qsim::ServerConfig sc;
        sc.id = static_cast<int>(r.integer("id", static_cast<long long>(i) + 1));
        sc.channels = static_cast<int>(r.integer("channels", 1));
        sc.buffer = static_cast<int>(r.integer("buffer", 10));

        const json& rate = r.at("service_rate");
        if (rate.is_number()) {
            for (const auto& f : s.flows) sc.service_rate[f.spec.class_id] = rate.get<double>();
        } else if (rate.is_object()) {
            for (const auto& [k, v] : rate.items())
                sc.service_rate[class_key(k, r.child("service_rate"))] = ObjectReader::as_number(v, r.child("service_rate") + "." + k);
        } else {
            throw ScenarioError("scenario: '" + r.child("service_rate") + "' must be a number or an object keyed by class");
        }

        if (r.has("demand_per_work")) {
            const json& d = r.at("demand_per_work");
            if (d.is_object() && d.contains("cpu")) {
                const auto res = read_resources(d, r.child("demand_per_work"));
                for (const auto& f : s.flows) sc.demand_per_work[f.spec.class_id] = res;
            } else if (d.is_object()) {
                for (const auto& [k, v] : d.items())
                    sc.demand_per_work[class_key(k, r.child("demand_per_work"))] =
                        read_resources(v, r.child("demand_per_work") + "." + k);
            } else {
                throw ScenarioError("scenario: '" + r.child("demand_per_work") + "' must be an object");
            }
        }

        if (r.has("capacity")) {
            sc.capacity = read_resources(r.at("capacity"), r.child("capacity"));
        } else {
            // Full channels draw 100% CPU; a full server (channels + buffer) draws 100% memory and disk.
            qsim::Resources peak;
            for (const auto& [cls, mu] : sc.service_rate) {
                const auto d = sc.demand_for(cls);
                peak.cpu = std::max(peak.cpu, mu * d.cpu);
                peak.mem = std::max(peak.mem, mu * d.mem);
                peak.disk = std::max(peak.disk, mu * d.disk);
            }
            const double places = static_cast<double>(sc.channels + std::max(0, sc.buffer));
            sc.capacity = {peak.cpu > 0.0 ? sc.channels * peak.cpu : 1.0, peak.mem > 0.0 ? places * peak.mem : 1.0,
                           peak.disk > 0.0 ? places * peak.disk : 1.0};
        }
        s.servers.push_back(std::move(sc));
    }

    s.validate();
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario file '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return parse_scenario(buf.str());
    } catch (const ScenarioError& e) {
        throw ScenarioError(path.string() + ": " + e.what());
    }
}

std::string scenario_to_json(const Scenario& s) {
    json doc;
    doc["algorithm"] = std::string(to_string(s.algorithm));
    doc["window"] = {{"T", s.window.length}, {"shift", s.window.shift}};
    if (s.mfdfa) doc["mfdfa"] = {{"q", s.mfdfa->q_grid}, {"scales", s.mfdfa->scales}, {"order", s.mfdfa->order}};
    doc["eject"] = {{"beta", s.eject.beta},
                    {"displaced_fate", s.eject.displaced_fate == qsim::DisplacedFate::requeue ? "requeue" : "drop"}};
    doc["preemptive"] = s.preemptive;
    doc["duration"] = s.duration;
    doc["dt"] = s.dt;
    doc["seed"] = s.seed;
    doc["balancer"] = {{"alpha", s.alpha}, {"gamma", s.gamma}, {"eps", s.eps}};
    doc["flows"] = json::array();
    for (const auto& f : s.flows) {
        json j{{"class", f.spec.class_id},
               {"priority", f.spec.priority},
               {"rate", f.spec.base_rate},
               {"model", std::string(to_string(f.model))},
               {"hurst", f.spec.hurst},
               {"cascade_weight", f.spec.cascade_weight},
               {"sigma", f.sigma},
               {"randomize", f.randomize},
               {"mean_size", f.spec.mean_size}};
        j["lifetime"] = std::isinf(f.spec.lifetime) ? json(nullptr) : json(f.spec.lifetime);
        j["rate_changes"] = json::array();
        for (const auto& rc : f.rate_changes) j["rate_changes"].push_back({{"at", rc.at}, {"factor", rc.factor}});
        doc["flows"].push_back(j);
    }
    doc["servers"] = json::array();
    for (const auto& sc : s.servers) {
        json rates = json::object(), demand = json::object();
        for (const auto& [cls, mu] : sc.service_rate) rates[std::to_string(cls)] = mu;
        for (const auto& [cls, d] : sc.demand_per_work) demand[std::to_string(cls)] = resources_json(d);
        doc["servers"].push_back({{"id", sc.id},
                                  {"channels", sc.channels},
                                  {"buffer", sc.buffer},
                                  {"service_rate", rates},
                                  {"capacity", resources_json(sc.capacity)},
                                  {"demand_per_work", demand}});
    }
    return doc.dump(2);
}

std::string config_digest(const Scenario& s) {
    Scenario copy = s;
    copy.seed = 0;
    const std::string text = scenario_to_json(copy);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

}  // namespace mflb::harness
