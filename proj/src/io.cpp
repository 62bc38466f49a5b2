#include "clab/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace clab {

using nlohmann::json;

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string field_to_json(const ConductanceField& field) {
    const LatticeBox& box = field.box();
    const Law& law = field.law();
    json j;
    j["schema"] = "conductance-field-v1";
    j["dim"] = box.dim();
    j["side"] = box.side();
    j["boundary"] = to_string(box.boundary());
    j["law"] = to_string(law.kind);
    j["value"] = law.value;
    j["c_m"] = law.c_m;
    j["p0"] = law.p0;
    j["seed"] = field.seed();
    j["weights"] = std::vector<double>(field.edge_weights().begin(), field.edge_weights().end());
    return j.dump();
}

ConductanceField field_from_json(const std::string& text) {
    const json j = json::parse(text);
    if (j.value("schema", "") != "conductance-field-v1") throw std::invalid_argument("not a conductance field");
    const LatticeBox box(j.at("dim").get<int>(), j.at("side").get<int>(),
                         boundary_from_string(j.at("boundary").get<std::string>()));
    Law law;
    law.kind = law_from_string(j.at("law").get<std::string>());
    law.value = j.at("value").get<double>();
    law.c_m = j.at("c_m").get<double>();
    law.p0 = j.at("p0").get<double>();
    return ConductanceField(box, law, j.at("seed").get<std::uint64_t>(), j.at("weights").get<std::vector<double>>());
}

void write_field_json(const ConductanceField& field, const std::string& path) {
    write_text(path, field_to_json(field));
}

ConductanceField read_field_json(const std::string& path) { return field_from_json(read_text(path)); }

namespace {

constexpr char kFieldMagic[8] = {'C', 'L', 'F', 'I', 'E', 'L', 'D', '1'};

template <class T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("truncated field file");
    return v;
}

}  // namespace

void write_field_binary(const ConductanceField& field, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(kFieldMagic, sizeof kFieldMagic);
    const LatticeBox& box = field.box();
    put<std::int32_t>(out, box.dim());
    put<std::int32_t>(out, box.side());
    put<std::int32_t>(out, static_cast<std::int32_t>(box.boundary()));
    put<std::int32_t>(out, static_cast<std::int32_t>(field.law().kind));
    put<double>(out, field.law().value);
    put<double>(out, field.law().c_m);
    put<double>(out, field.law().p0);
    put<std::uint64_t>(out, field.seed());
    const auto w = field.edge_weights();
    put<std::uint64_t>(out, w.size());
    out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed for " + path);
}

ConductanceField read_field_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kFieldMagic, sizeof magic) != 0) throw std::runtime_error(path + " is not a field file");
    const auto dim = get<std::int32_t>(in);
    const auto side = get<std::int32_t>(in);
    const auto boundary = get<std::int32_t>(in);
    const auto kind = get<std::int32_t>(in);
    if (boundary < 0 || boundary > 1 || kind < 0 || kind > 2) throw std::runtime_error("corrupt field header");
    Law law;
    law.kind = static_cast<LawKind>(kind);
    law.value = get<double>(in);
    law.c_m = get<double>(in);
    law.p0 = get<double>(in);
    const auto seed = get<std::uint64_t>(in);
    const auto n = get<std::uint64_t>(in);
    const LatticeBox box(dim, side, static_cast<Boundary>(boundary));
    if (n != box.num_vertices() * static_cast<std::uint64_t>(dim)) throw std::runtime_error("corrupt field size");
    std::vector<double> w(n);
    in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("truncated field file");
    return ConductanceField(box, law, seed, std::move(w));
}

std::string front_to_csv(const FrontSeries& s) {
    std::string out = "# schema=front-v1";
    if (s.extinction_time) out += " extinction_time=" + format_double(*s.extinction_time);
    out += "\nt,front,infected_count\n";
    for (std::size_t i = 0; i < s.times.size(); ++i)
        out += format_double(s.times[i]) + "," + format_double(s.front[i]) + "," + std::to_string(s.infected[i]) + "\n";
    return out;
}

std::string cell_report_to_json(const CellEventReport& r) {
    json j;
    j["schema"] = "cell-event-v1";
    j["spec"] = {{"ell", r.spec.ell},          {"eta", r.spec.eta},
                 {"beta_time", r.spec.time_cell()}, {"T", r.spec.collision_time()},
                 {"lambda0", r.spec.lambda0},  {"w", r.spec.w},
                 {"gamma", r.spec.gamma},      {"c1", r.spec.c1}};
    j["intensity"] = r.intensity;
    j["reps"] = r.reps;
    j["successes"] = r.successes;
    j["probability"] = r.probability;
    j["ci"] = {r.ci.lo, r.ci.hi};
    j["F1"] = r.f1;
    j["F2"] = r.f2;
    j["F3"] = r.f3;
    json reps = json::array();
    for (const auto& o : r.outcomes)
        reps.push_back({{"E_st", o.e_st}, {"F1", o.f1}, {"F2", o.f2}, {"F3", o.f3},
                        {"particles", o.particles}, {"collided", o.collided}, {"collided_inside", o.collided_inside}});
    j["outcomes"] = reps;
    return j.dump();
}

std::string cell_field_to_json(const CellField& c) {
    json j;
    j["schema"] = "cell-field-v1";
    j["base"] = c.grid.base;
    j["h_min"] = c.grid.h_min;
    j["h_max"] = c.grid.h_max;
    j["source"] = c.source == CellSource::iid ? "iid" : "simulated";
    j["p_bad"] = c.p_bad;
    j["note"] = c.note;
    json flags = json::array();
    for (std::size_t b = 0; b < c.grid.base_count(); ++b) {
        json col = json::array();
        for (int h = c.grid.h_min; h <= c.grid.h_max; ++h) col.push_back(c.is_good(b, h) ? 1 : 0);
        flags.push_back(col);
    }
    j["good"] = flags;
    return j.dump();
}

CellField cell_field_from_json(const std::string& text) {
    const json j = json::parse(text);
    if (j.value("schema", "") != "cell-field-v1") throw std::invalid_argument("not a cell field");
    CellField c;
    c.grid.base = j.at("base").get<std::vector<int>>();
    c.grid.h_min = j.at("h_min").get<int>();
    c.grid.h_max = j.at("h_max").get<int>();
    c.source = j.value("source", "iid") == "iid" ? CellSource::iid : CellSource::simulated;
    c.p_bad = j.value("p_bad", 0.0);
    c.note = j.value("note", "");
    const auto& flags = j.at("good");
    if (flags.size() != c.grid.base_count()) throw std::invalid_argument("cell field: wrong number of base cells");
    c.good.resize(c.grid.size());
    for (std::size_t b = 0; b < flags.size(); ++b) {
        if (flags[b].size() != c.grid.height_count()) throw std::invalid_argument("cell field: wrong column height");
        for (int h = c.grid.h_min; h <= c.grid.h_max; ++h)
            c.good[c.grid.index(b, h)] = flags[b][static_cast<std::size_t>(h - c.grid.h_min)].get<int>() ? 1 : 0;
    }
    return c;
}

std::string surface_to_json(const CellGrid& grid, const TwoSidedSurface& s) {
    json j;
    j["schema"] = "surface-v1";
    j["base"] = grid.base;
    j["h_min"] = grid.h_min;
    j["h_max"] = grid.h_max;
    j["exists"] = s.exists();
    j["F_plus"] = s.plus ? json(*s.plus) : json(nullptr);
    j["F_minus"] = s.minus ? json(*s.minus) : json(nullptr);
    return j.dump();
}

}  // namespace clab
