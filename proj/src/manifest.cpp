#include "flowpipe/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "flowpipe/error.hpp"
#include "flowpipe/workers_arg.hpp"

namespace flowpipe {

namespace {

using Doc = nlohmann::ordered_json;

[[noreturn]] void malformed(const std::string& why) {
  throw Error(ErrorCode::MalformedManifest, why);
}

Value plain(const Doc& d) { return Value::parse(d.dump()); }
Doc ordered(const Value& v) { return Doc::parse(v.dump()); }

void only_keys(const Doc& obj, std::initializer_list<std::string_view> allowed,
               const std::string& where) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == k;
    if (!ok) malformed(where + ": unknown key '" + k + "'");
  }
}

int get_int(const Doc& obj, const char* key, int fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const Doc& v = obj[key];
  if (!v.is_number_integer()) malformed(where + ": '" + key + "' must be an integer");
  const auto n = v.get<long long>();
  if (n < -1000000000LL || n > 1000000000LL) malformed(where + ": '" + key + "' out of range");
  return static_cast<int>(n);
}

std::optional<int> get_opt_int(const Doc& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
  return get_int(obj, key, 0, where);
}

bool get_bool(const Doc& obj, const char* key, bool fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) malformed(where + ": '" + key + "' must be a boolean");
  return obj[key].get<bool>();
}

std::vector<Value> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) malformed("cannot read input file '" + path + "'");
  std::vector<Value> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(Value::parse(line));
    } catch (const nlohmann::json::exception&) {
      malformed("input file '" + path + "' line " + std::to_string(n) + " is not a JSON value");
    }
  }
  return out;
}

ExecutorConfig parse_executor(const std::string& name, const Doc& e) {
  const std::string where = "executor " + name;
  if (!e.is_object()) malformed(where + ": must be an object");
  only_keys(e, {"inproc", "outproc", "remote", "stride"}, where);
  ExecutorConfig cfg;
  cfg.name = name;
  cfg.lanes_inproc = get_int(e, "inproc", 0, where);
  cfg.lanes_outproc = get_int(e, "outproc", 0, where);
  cfg.stride = get_int(e, "stride", 1, where);
  if (e.contains("remote")) {
    const Doc& r = e["remote"];
    if (!r.is_array()) malformed(where + ": 'remote' must be a list");
    for (const auto& s : r) {
      if (!s.is_string()) malformed(where + ": remote entries must be strings");
      try {
        for (auto& ep : parse_workers_arg(s.get<std::string>())) cfg.remote.push_back(ep);
      } catch (const Error& err) {
        malformed(where + ": " + err.what());
      }
    }
  }
  return cfg;
}

PiperSpec parse_piper(const std::string& name, const Doc& p, const WorkerRegistry& registry) {
  const std::string where = "piper " + name;
  if (!p.is_object()) malformed(where + ": must be an object");
  only_keys(p, {"chain", "executor", "ordered", "produce", "spawn", "consume", "timeout_ms",
                "handles_faults"},
            where);
  PiperSpec spec;
  spec.name = name;
  if (!p.contains("chain") || !p["chain"].is_array()) malformed(where + ": 'chain' must be a list");
  for (const auto& st : p["chain"]) {
    if (!st.is_object()) malformed(where + ": chain entries must be objects");
    only_keys(st, {"fn", "kwargs"}, where + " chain entry");
    if (!st.contains("fn") || !st["fn"].is_string()) malformed(where + ": chain entry needs 'fn'");
    FunctionRef ref;
    ref.name = st["fn"].get<std::string>();
    if (st.contains("kwargs")) {
      if (!st["kwargs"].is_object()) malformed(where + ": 'kwargs' must be an object");
      ref.kwargs = plain(st["kwargs"]);
    }
    if (!registry.contains(ref.name)) {
      throw Error(ErrorCode::UnknownFunction, where + ": unknown worker '" + ref.name + "'");
    }
    spec.chain.stages.push_back(std::move(ref));
  }
  spec.chain.handles_faults = get_bool(p, "handles_faults", false, where);
  if (p.contains("executor") && !p["executor"].is_null()) {
    if (!p["executor"].is_string()) malformed(where + ": 'executor' must be a string");
    spec.executor = p["executor"].get<std::string>();
  }
  spec.ordered = get_bool(p, "ordered", true, where);
  spec.produce = get_opt_int(p, "produce", where);
  spec.spawn = get_opt_int(p, "spawn", where);
  spec.consume = get_opt_int(p, "consume", where);
  spec.timeout_ms = get_opt_int(p, "timeout_ms", where);
  return spec;
}

}  // namespace

std::string save_manifest(const Pipeline& pipeline,
                          const std::map<std::string, std::vector<Value>>* inputs) {
  Doc doc = Doc::object();
  Doc execs = Doc::object();
  for (const auto& [name, cfg] : pipeline.executors()) {
    Doc e = Doc::object();
    e["inproc"] = cfg.lanes_inproc;
    e["outproc"] = cfg.lanes_outproc;
    Doc remote = Doc::array();
    for (const auto& ep : cfg.remote) remote.push_back(format_endpoint(ep));
    e["remote"] = std::move(remote);
    e["stride"] = cfg.stride;
    execs[name] = std::move(e);
  }
  doc["executors"] = std::move(execs);

  Doc pipers = Doc::object();
  for (const auto& node : pipeline.dag().nodes()) {
    const PiperSpec& s = pipeline.pipers().at(node.name);
    Doc p = Doc::object();
    Doc chain = Doc::array();
    for (const auto& st : s.chain.stages) {
      chain.push_back(Doc{{"fn", st.name}, {"kwargs", ordered(st.kwargs)}});
    }
    p["chain"] = std::move(chain);
    if (s.executor) p["executor"] = *s.executor;
    p["ordered"] = s.ordered;
    if (s.produce) p["produce"] = *s.produce;
    if (s.spawn) p["spawn"] = *s.spawn;
    if (s.consume) p["consume"] = *s.consume;
    if (s.timeout_ms) p["timeout_ms"] = *s.timeout_ms;
    if (s.chain.handles_faults) p["handles_faults"] = true;
    pipers[s.name] = std::move(p);
  }
  doc["pipers"] = std::move(pipers);

  Doc pipes = Doc::array();
  for (const auto& [from, to] : pipeline.dag().edges()) pipes.push_back(Doc{from, to});
  doc["pipes"] = std::move(pipes);

  if (inputs) {
    Doc in = Doc::object();
    for (const auto& r : pipeline.dag().roots()) {
      if (auto it = inputs->find(r.name); it != inputs->end()) {
        Doc list = Doc::array();
        for (const auto& v : it->second) list.push_back(ordered(v));
        in[r.name] = std::move(list);
      }
    }
    doc["inputs"] = std::move(in);
  }
  return doc.dump(2) + "\n";
}

LoadedManifest load_manifest(std::string_view text, std::shared_ptr<WorkerRegistry> registry,
                             const std::string& base_dir) {
  Doc doc;
  try {
    doc = Doc::parse(text);
  } catch (const nlohmann::json::exception& e) {
    malformed(std::string("not a JSON document: ") + e.what());
  }
  if (!doc.is_object()) malformed("top level must be an object");
  only_keys(doc, {"executors", "pipers", "pipes", "inputs"}, "manifest");

  LoadedManifest out;
  out.pipeline = std::make_unique<Pipeline>(registry);
  Pipeline& p = *out.pipeline;

  if (doc.contains("executors")) {
    if (!doc["executors"].is_object()) malformed("'executors' must be an object");
    for (const auto& [name, e] : doc["executors"].items()) p.add_executor(parse_executor(name, e));
  }
  if (!doc.contains("pipers") || !doc["pipers"].is_object()) {
    malformed("'pipers' must be an object");
  }
  for (const auto& [name, spec] : doc["pipers"].items()) {
    if (name.empty()) malformed("piper names must be non-empty");
    PiperSpec s = parse_piper(name, spec, *registry);
    if (s.executor && !p.executors().count(*s.executor)) {
      throw Error(ErrorCode::UnknownExecutor,
                  "piper " + name + ": unknown executor '" + *s.executor + "'");
    }
    p.add_piper(std::move(s));
  }
  if (doc.contains("pipes")) {
    if (!doc["pipes"].is_array()) malformed("'pipes' must be a list");
    for (const auto& pipe : doc["pipes"]) {
      if (!pipe.is_array() || pipe.size() != 2 || !pipe[0].is_string() || !pipe[1].is_string()) {
        malformed("each pipe must be a [from, to] pair of names");
      }
      const auto from = pipe[0].get<std::string>();
      const auto to = pipe[1].get<std::string>();
      for (const auto& n : {from, to}) {
        if (!p.pipers().count(n)) malformed("pipe references unknown piper '" + n + "'");
      }
      p.add_pipe(from, to);
    }
  }
  if (doc.contains("inputs")) {
    const Doc& in = doc["inputs"];
    if (!in.is_object()) malformed("'inputs' must be an object");
    const auto roots = p.dag().roots();
    for (const auto& [name, v] : in.items()) {
      bool is_root = false;
      for (const auto& r : roots) is_root = is_root || r.name == name;
      if (!is_root) malformed("inputs given for '" + name + "', which is not an input piper");
      if (!v.is_array() && !(v.is_string() && v.get<std::string>().rfind('@', 0) == 0)) {
        malformed("inputs for '" + name + "' must be a list or an \"@file\" reference");
      }
    }
    out.has_inputs = true;
    for (const auto& r : roots) {
      if (!in.contains(r.name)) malformed("no inputs given for input piper '" + r.name + "'");
      const Doc& v = in[r.name];
      if (v.is_string()) {
        std::filesystem::path path = v.get<std::string>().substr(1);
        if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
        out.inputs.push_back(read_lines(path.string()));
      } else {
        std::vector<Value> items;
        for (const auto& x : v) items.push_back(plain(x));
        out.inputs.push_back(std::move(items));
      }
    }
  }
  return out;
}

LoadedManifest load_manifest_file(const std::string& path,
                                  std::shared_ptr<WorkerRegistry> registry) {
  std::ifstream in(path);
  if (!in) malformed("cannot read manifest '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path();
  return load_manifest(ss.str(), std::move(registry), dir.empty() ? "." : dir.string());
}

}  // namespace flowpipe
