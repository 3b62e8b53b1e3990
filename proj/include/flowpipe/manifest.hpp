#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "flowpipe/pipeline.hpp"

namespace flowpipe {

/// A pipeline rebuilt from a manifest plus its declared inputs, one list per
/// root in root order (empty when the manifest declares none).
struct LoadedManifest {
  std::unique_ptr<Pipeline> pipeline;
  std::vector<std::vector<Value>> inputs;
  bool has_inputs = false;
};

/// JSON text with keys executors, pipers, pipes and (optionally) inputs.
/// Document order follows insertion order, so roots and topo ties survive a
/// roundtrip.
std::string save_manifest(const Pipeline& pipeline,
                          const std::map<std::string, std::vector<Value>>* inputs = nullptr);

/// Throws Error(MalformedManifest), Error(UnknownFunction), Error(UnknownExecutor)
/// or the topology errors of the graph (e.g. CycleRejected). "@file" inputs
/// are resolved against `base_dir`.
LoadedManifest load_manifest(std::string_view text, std::shared_ptr<WorkerRegistry> registry,
                             const std::string& base_dir = ".");
LoadedManifest load_manifest_file(const std::string& path,
                                  std::shared_ptr<WorkerRegistry> registry);

}  // namespace flowpipe
