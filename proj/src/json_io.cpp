#include "iconq/json_io.hpp"

#include <fstream>

#include "json.hpp"

namespace iconq {

using ordered_json = nlohmann::ordered_json;

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open for reading: " + path);
    return in;
}

double want_number(const ordered_json& j, const char* field, const std::string& ctx) {
    if (!j.contains(field) || !j[field].is_number())
        throw DataError(ctx + ": missing or non-numeric field '" + field + "'");
    return j[field].get<double>();
}

std::int64_t want_int(const ordered_json& j, const char* field, const std::string& ctx) {
    if (!j.contains(field) || !j[field].is_number_integer())
        throw DataError(ctx + ": missing or non-integer field '" + field + "'");
    return j[field].get<std::int64_t>();
}

}  // namespace

void write_pool(const QueryPool& pool, const std::string& path) {
    ordered_json arr = ordered_json::array();
    for (const Query& q : pool.queries()) {
        ordered_json jq;
        jq["query_id"] = q.query_id;
        jq["template_id"] = q.template_id;
        ordered_json ops = ordered_json::array();
        for (const PlanOperator& op : q.operators)
            ops.push_back({{"kind", op_kind_name(op.kind)}, {"est_rows", op.est_rows}});
        jq["operators"] = std::move(ops);
        ordered_json scans = ordered_json::object();
        for (const auto& [table, rows] : q.table_scans) scans[table] = rows;
        jq["table_scans"] = std::move(scans);
        ordered_json prof;
        prof["base_runtime"] = q.profile.base_runtime;
        prof["io_fraction"] = q.profile.io_fraction;
        prof["mem_demand"] = q.profile.mem_demand;
        prof["scan_tables"] = q.profile.scan_tables;
        jq["profile"] = std::move(prof);
        arr.push_back(std::move(jq));
    }
    auto out = open_out(path);
    out << arr.dump(2) << '\n';
}

QueryPool read_pool(const std::string& path) {
    auto in = open_in(path);
    ordered_json arr;
    try {
        in >> arr;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("pool file " + path + ": " + e.what());
    }
    if (!arr.is_array()) throw DataError("pool file " + path + ": expected a JSON array");
    std::vector<Query> queries;
    queries.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const ordered_json& jq = arr[i];
        std::string ctx = path + " query[" + std::to_string(i) + "]";
        Query q;
        q.query_id = want_int(jq, "query_id", ctx);
        q.template_id = want_int(jq, "template_id", ctx);
        if (!jq.contains("operators") || !jq["operators"].is_array())
            throw DataError(ctx + ": missing operators array");
        for (const auto& jop : jq["operators"]) {
            PlanOperator op;
            if (!jop.contains("kind") || !jop["kind"].is_string())
                throw DataError(ctx + ": operator without kind");
            op.kind = op_kind_from_name(jop["kind"].get<std::string>());
            op.est_rows = want_number(jop, "est_rows", ctx);
            if (op.est_rows < 0) throw DataError(ctx + ": est_rows must be >= 0");
            q.operators.push_back(op);
        }
        if (!jq.contains("table_scans") || !jq["table_scans"].is_object())
            throw DataError(ctx + ": missing table_scans object");
        for (const auto& [table, rows] : jq["table_scans"].items()) {
            if (!rows.is_number()) throw DataError(ctx + ": non-numeric table_scans entry");
            q.table_scans[table] = rows.get<double>();
        }
        if (!jq.contains("profile") || !jq["profile"].is_object())
            throw DataError(ctx + ": missing profile object");
        const ordered_json& prof = jq["profile"];
        q.profile.base_runtime = want_number(prof, "base_runtime", ctx);
        q.profile.io_fraction = want_number(prof, "io_fraction", ctx);
        q.profile.mem_demand = want_number(prof, "mem_demand", ctx);
        if (!(q.profile.base_runtime > 0)) throw DataError(ctx + ": base_runtime must be > 0");
        if (q.profile.io_fraction < 0 || q.profile.io_fraction > 1)
            throw DataError(ctx + ": io_fraction must be in [0, 1]");
        if (q.profile.mem_demand < 0) throw DataError(ctx + ": mem_demand must be >= 0");
        if (!prof.contains("scan_tables") || !prof["scan_tables"].is_array())
            throw DataError(ctx + ": missing scan_tables array");
        for (const auto& t : prof["scan_tables"]) {
            if (!t.is_string()) throw DataError(ctx + ": non-string scan table");
            q.profile.scan_tables.push_back(t.get<std::string>());
        }
        for (const std::string& t : q.profile.scan_tables)
            if (!q.table_scans.count(t))
                throw DataError(ctx + ": scan table '" + t + "' missing from table_scans");
        queries.push_back(std::move(q));
    }
    return QueryPool(std::move(queries));
}

void write_trace(const std::vector<ExecutedRecord>& trace, const std::string& path) {
    auto out = open_out(path);
    for (const ExecutedRecord& r : trace) {
        ordered_json j;
        j["query_id"] = r.query_id;
        j["arrival_time"] = r.arrival_time;
        j["submit_time"] = r.submit_time;
        j["finish_time"] = r.finish_time;
        j["system_runtime"] = r.system_runtime;
        out << j.dump() << '\n';
    }
}

std::vector<ExecutedRecord> read_trace(const std::string& path) {
    auto in = open_in(path);
    std::vector<ExecutedRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        std::string ctx = path + ":" + std::to_string(lineno);
        ExecutedRecord r;
        r.query_id = want_int(j, "query_id", ctx);
        r.arrival_time = want_number(j, "arrival_time", ctx);
        r.submit_time = want_number(j, "submit_time", ctx);
        r.finish_time = want_number(j, "finish_time", ctx);
        r.system_runtime = want_number(j, "system_runtime", ctx);
        out.push_back(r);
    }
    validate_trace(out);
    return out;
}

void write_arrivals(const std::vector<ArrivalEvent>& arrivals, const std::string& path) {
    auto out = open_out(path);
    for (const ArrivalEvent& a : arrivals) {
        ordered_json j;
        j["query_id"] = a.query_id;
        j["arrival_time"] = a.arrival_time;
        out << j.dump() << '\n';
    }
}

std::vector<ArrivalEvent> read_arrivals(const std::string& path) {
    auto in = open_in(path);
    std::vector<ArrivalEvent> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        std::string ctx = path + ":" + std::to_string(lineno);
        out.push_back({want_int(j, "query_id", ctx), want_number(j, "arrival_time", ctx)});
    }
    return out;
}

void write_targets(const std::vector<ReplayTarget>& targets, const std::string& path) {
    auto out = open_out(path);
    for (const ReplayTarget& t : targets) {
        ordered_json j;
        j["arrival_time"] = t.arrival_time;
        j["target_runtime"] = t.target_runtime;
        out << j.dump() << '\n';
    }
}

std::vector<ReplayTarget> read_targets(const std::string& path) {
    auto in = open_in(path);
    std::vector<ReplayTarget> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        std::string ctx = path + ":" + std::to_string(lineno);
        out.push_back({want_number(j, "arrival_time", ctx), want_number(j, "target_runtime", ctx)});
    }
    return out;
}

}  // namespace iconq
