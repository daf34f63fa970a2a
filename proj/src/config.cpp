#include "rhee/errors.hpp"
#include "rhee/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace rhee {

namespace {

using nlohmann::json;

// Reads fields from one JSON object and rejects anything it was not asked about.
class Section {
public:
    Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(where() + " must be an object");
    }

    bool has(const std::string& key) const { return doc_.contains(key); }

    template <class T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        if (!doc_.contains(key)) return;
        const json& v = doc_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_arithmetic_v<T>) {
                if (!v.is_number()) throw ConfigError("");
                if constexpr (std::is_integral_v<T>) {
                    if (!v.is_number_integer()) throw ConfigError("");
                }
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            out = v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError(where(key) + " has the wrong type");
        }
    }

    void read_vector(const std::string& key, Eigen::VectorXd& out) {
        std::vector<double> v;
        read(key, v);
        if (!has(key)) return;
        out = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

    void read_matrix(const std::string& key, Eigen::MatrixXd& out) {
        seen_.insert(key);
        if (!has(key)) return;
        std::vector<std::vector<double>> rows;
        try {
            rows = doc_.at(key).get<std::vector<std::vector<double>>>();
        } catch (const std::exception&) {
            throw ConfigError(where(key) + " must be a list of rows");
        }
        if (rows.empty()) throw ConfigError(where(key) + " is empty");
        out.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.front().size()) throw ConfigError(where(key) + " rows differ in length");
            for (std::size_t j = 0; j < rows[i].size(); ++j)
                out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(doc_.contains(key) ? doc_.at(key) : empty, where(key));
    }

    std::vector<Section> children(const std::string& key) {
        seen_.insert(key);
        std::vector<Section> out;
        if (!doc_.contains(key)) return out;
        const json& arr = doc_.at(key);
        if (!arr.is_array()) throw ConfigError(where(key) + " must be a list");
        for (std::size_t i = 0; i < arr.size(); ++i) out.emplace_back(arr[i], where(key) + "[" + std::to_string(i) + "]");
        return out;
    }

    void finish() const {
        for (const auto& [key, value] : doc_.items()) {
            (void)value;
            if (!seen_.count(key)) throw ConfigError("unknown key " + where(key));
        }
    }

    std::string where(const std::string& key = "") const {
        if (key.empty()) return path_.empty() ? "<root>" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

private:
    const json& doc_;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

void parse_controller(Section s, ControllerConfig& c) {
    s.read("Q", c.Q);
    s.read_matrix("R", c.R);
    s.read("r_scale", c.r_scale);
    s.read("K", c.K);
    s.read("horizon", c.horizon);
    s.read("sample_time", c.sample_time);
    double alpha_d = 0.0;
    if (s.has("alpha_d")) {
        s.read("alpha_d", alpha_d);
        c.alpha_d = alpha_d;
    }
    s.read("memory", c.memory);
    s.read("lambda_init", c.lambda_init);
    s.read("shrink", c.shrink);
    s.read("max_iterations", c.max_iterations);
    s.read("dt", c.dt);
    s.read("contraction_slack", c.contraction_slack);
    s.read("boundary_weight", c.boundary_weight);
    s.finish();
}

void parse_system(Section s, SystemSpec& sys) {
    s.read("type", sys.type);
    s.read("u_bound", sys.u_bound);
    s.read("elastic_walls", sys.elastic_walls);
    s.read("damping", sys.damping);
    s.read("height", sys.height);
    {
        Section q = s.child("quadrotor");
        auto& p = sys.quadrotor;
        q.read("mass", p.mass);
        q.read("gravity", p.gravity);
        q.read("arm", p.arm);
        q.read("inertia_xx", p.inertia_xx);
        q.read("inertia_yy", p.inertia_yy);
        q.read("inertia_zz", p.inertia_zz);
        q.read("yaw_coefficient", p.yaw_coefficient);
        q.read("u_min", p.u_min);
        q.read("u_max", p.u_max);
        q.finish();
    }
    {
        Section g = s.child("height_gains");
        g.read("kp", sys.height_gains.kp);
        g.read("kd", sys.height_gains.kd);
        g.finish();
    }
    s.read("attitude_hold", sys.attitude_hold);
    {
        Section g = s.child("attitude_gains");
        g.read("kp", sys.attitude_gains.kp);
        g.read("kd", sys.attitude_gains.kd);
        g.finish();
    }
    s.finish();
    require(sys.type == "double_integrator" || sys.type == "quadrotor", s.where("type") + " must be double_integrator or quadrotor");
    require(sys.damping >= 0.0, s.where("damping") + " must be non-negative");
}

void parse_phi(Section s, PhiSpec& phi) {
    s.read("source", phi.source);
    s.read("grid_file", phi.grid_file);
    s.read("cells", phi.cells);
    for (auto& o : s.children("occlusions")) {
        OcclusionSpec occ;
        o.read("shape", occ.shape);
        o.read_vector("center", occ.center);
        o.read("radius", occ.radius);
        o.read_vector("lower", occ.lower);
        o.read_vector("upper", occ.upper);
        o.finish();
        require(occ.shape == "circle" || occ.shape == "rectangle", o.where("shape") + " must be circle or rectangle");
        phi.occlusions.push_back(std::move(occ));
    }
    s.read_vector("mean", phi.mean);
    s.read_matrix("covariance", phi.covariance);
    s.finish();
    static const std::set<std::string> sources{"uniform", "occlusion", "gaussian", "grid", "eid"};
    require(sources.count(phi.source) == 1, s.where("source") + " must be one of uniform, occlusion, gaussian, grid, eid");
}

void parse_targets(Section& root, std::vector<TargetSpec>& targets) {
    int next_id = 0;
    for (auto& s : root.children("targets")) {
        TargetSpec t;
        t.id = next_id;
        s.read("id", t.id);
        s.read("motion", t.motion);
        s.read_vector("position", t.position);
        s.read("times", t.times);
        std::vector<std::vector<double>> pts;
        s.read("points", pts);
        for (auto& p : pts) t.points.push_back(Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size())));
        s.read("sigma", t.sigma);
        s.read("dt", t.dt);
        s.read("appear_time", t.appear_time);
        s.read("seed", t.seed);
        s.read_vector("prior_mean", t.prior_mean);
        s.read("prior_sigma", t.prior_sigma);
        s.finish();
        require(t.motion == "static" || t.motion == "waypoints" || t.motion == "diffusion",
                s.where("motion") + " must be static, waypoints or diffusion");
        if (t.motion == "waypoints") {
            require(!t.points.empty() && t.points.size() == t.times.size(), s.where("points") + " needs one time per point");
        } else {
            require(t.position.size() > 0, s.where("position") + " is required");
        }
        next_id = t.id + 1;
        targets.push_back(std::move(t));
    }
}

}  // namespace

ScenarioConfig parse_config(const nlohmann::json& doc) {
    ScenarioConfig cfg;
    cfg.source = doc;
    Section root(doc, "");
    root.read("name", cfg.name);
    {
        Section d = root.child("domain");
        d.read("bounds", cfg.bounds);
        d.finish();
    }
    parse_system(root.child("system"), cfg.system);
    parse_controller(root.child("controller"), cfg.controller);
    parse_phi(root.child("phi"), cfg.phi);
    parse_targets(root, cfg.targets);
    {
        Section r = root.child("random_targets");
        r.read("count", cfg.random_targets.count);
        r.read("margin", cfg.random_targets.margin);
        r.finish();
    }
    {
        Section s = root.child("sensor");
        auto& sn = cfg.sensor;
        s.read("enabled", sn.enabled);
        s.read("model", sn.model);
        s.read("range", sn.range);
        s.read("frequency", sn.frequency);
        s.read("noise", sn.noise);
        s.read("sigma_init", sn.sigma_init);
        s.read("process_noise", sn.process_noise);
        s.read("height", sn.height);
        s.finish();
    }
    {
        Section e = root.child("eid");
        auto& ei = cfg.eid;
        e.read("cells", ei.cells);
        e.read("frequency", ei.frequency);
        e.read("exploration_floor", ei.exploration_floor);
        e.read("belief_cells", ei.belief_cells);
        e.read("belief_extent", ei.belief_extent);
        e.read("range_gated", ei.range_gated);
        e.read("drop_floor_after", ei.drop_floor_after);
        e.finish();
    }
    {
        Section a = root.child("agents");
        auto& ag = cfg.agents;
        a.read("count", ag.count);
        std::vector<std::vector<double>> states;
        a.read("initial_states", states);
        for (auto& x : states) ag.initial_states.push_back(Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())));
        a.read("start_margin", ag.start_margin);
        a.read("normalized_average", ag.normalized_average);
        a.read("parallel", ag.parallel);
        a.read("transport", ag.transport);
        a.finish();
    }
    {
        Section r = root.child("run");
        auto& rn = cfg.run;
        r.read("t0", rn.t0);
        r.read("tf", rn.tf);
        r.read("seed", rn.seed);
        r.read("trials", rn.trials);
        r.read("localization_threshold", rn.localization_threshold);
        r.read("localization_hold", rn.localization_hold);
        r.read("scenario", rn.scenario);
        r.finish();
    }
    {
        Section o = root.child("outputs");
        auto& out = cfg.outputs;
        o.read("steps", out.steps);
        o.read("beliefs", out.beliefs);
        o.read("ergodicity", out.ergodicity);
        o.read("grids", out.grids);
        o.read("wall_clock", out.wall_clock);
        o.read("statistics_cells", out.statistics_cells);
        o.finish();
    }
    root.finish();

    require(!cfg.bounds.empty(), "domain.bounds must not be empty");
    for (double b : cfg.bounds) require(b > 0.0, "domain.bounds must be positive");
    require(cfg.run.tf >= cfg.run.t0, "run.tf must not precede run.t0");
    require(cfg.run.trials >= 1, "run.trials must be at least 1");
    require(cfg.run.scenario == "coverage" || cfg.run.scenario == "localize" || cfg.run.scenario == "search",
            "run.scenario must be coverage, localize or search");
    require(cfg.agents.count >= 1, "agents.count must be at least 1");
    require(cfg.agents.initial_states.empty() || static_cast<int>(cfg.agents.initial_states.size()) == cfg.agents.count,
            "agents.initial_states must list one state per agent");
    require(cfg.agents.transport == "memory" || cfg.agents.transport == "udp", "agents.transport must be memory or udp");
    require(cfg.sensor.model == "bearing_2d" || cfg.sensor.model == "bearing_3d", "sensor.model must be bearing_2d or bearing_3d");
    require(cfg.sensor.range > 0.0, "sensor.range must be positive");
    require(cfg.sensor.frequency > 0.0 && cfg.eid.frequency > 0.0, "sensor and EID frequencies must be positive");
    require(cfg.eid.exploration_floor >= 0.0 && cfg.eid.exploration_floor <= 1.0, "eid.exploration_floor must lie in [0, 1]");
    require(cfg.eid.cells.size() == cfg.bounds.size(), "eid.cells must match the domain dimension");
    require(cfg.phi.cells.size() == cfg.bounds.size(), "phi.cells must match the domain dimension");
    require(cfg.random_targets.count >= 0, "random_targets.count must be non-negative");
    try {
        ControlAffineSystem sys = make_system(cfg);
        cfg.controller.validate(sys.m);
        require(sys.ergodic_dims() == static_cast<int>(cfg.bounds.size()), "the system explores a different number of dimensions than the domain");
        for (const auto& x : cfg.agents.initial_states) require(x.size() == sys.n, "agents.initial_states entries must match the system state size");
        make_measurement_model(cfg.sensor);
    } catch (const UsageError& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(doc);
}

void validate_for(const ScenarioConfig& cfg, const std::string& scenario) {
    if (scenario == "coverage") {
        require(cfg.phi.source != "eid", "coverage needs a static phi source");
        if (cfg.phi.source == "grid") require(!cfg.phi.grid_file.empty(), "phi.grid_file is required for a grid source");
        if (cfg.phi.source == "gaussian")
            require(cfg.phi.mean.size() == static_cast<Eigen::Index>(cfg.bounds.size()) &&
                        cfg.phi.covariance.rows() == cfg.phi.mean.size() && cfg.phi.covariance.cols() == cfg.phi.mean.size(),
                    "gaussian phi needs a mean and covariance of the domain dimension");
        return;
    }
    require(scenario == "localize" || scenario == "search", "unknown scenario " + scenario);
    require(cfg.phi.source == "eid", scenario + " needs phi.source = eid");
    require(cfg.sensor.enabled, scenario + " needs an enabled sensor");
    require(!cfg.targets.empty() || cfg.random_targets.count > 0 || scenario == "search", scenario + " needs targets");
    const int params = cfg.sensor.model == "bearing_3d" ? 3 : 2;
    for (const auto& t : cfg.targets) {
        require(t.prior_mean.size() == 0 || t.prior_mean.size() == params, "target prior_mean must match the measurement model");
        require(t.prior_sigma > 0.0, "target prior_sigma must be positive");
        if (t.motion == "waypoints") {
            for (const auto& p : t.points) require(p.size() == params, "target waypoints must match the measurement model");
        } else {
            require(t.position.size() == params, "target positions must match the measurement model");
        }
    }
    require(cfg.sensor.process_noise.empty() || static_cast<int>(cfg.sensor.process_noise.size()) == params,
            "sensor.process_noise must have one entry per target coordinate");
    if (scenario == "search") require(cfg.eid.exploration_floor > 0.0, "search needs a positive exploration floor");
}

}  // namespace rhee
