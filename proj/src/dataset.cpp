#include "ssmf/dataset.hpp"

#include <fstream>

#include "ssmf/binary_io.hpp"
#include "ssmf/version.hpp"

namespace ssmf {

namespace {
constexpr char kDataMagic[8] = {'S', 'S', 'M', 'F', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kDataVersion = 1;
}  // namespace

void save_dataset(const TrajectoryBatch& batch, const std::string& path) {
  using namespace binio;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open dataset for writing: " + path);
  const auto& d = batch.dist;
  os.write(kDataMagic, 8);
  put<std::uint32_t>(os, kDataVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(d.n));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(d.m));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(batch.horizon));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(batch.items.size()));
  put<std::uint32_t>(os, d.noise.kind == NoiseKind::colored ? 1u : 0u);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(d.noise.window));
  put<std::uint64_t>(os, batch.seed);
  put<double>(os, d.radius);
  put<double>(os, d.sigma_w2);
  put<double>(os, d.sigma_v2);
  put<double>(os, d.noise.sigma_eta2);
  put<double>(os, d.noise.sigma_nu2);
  put_string(os, batch.config_digest);
  put_string(os, kToolVersion);
  for (const Trajectory& tr : batch.items) {
    require(tr.ys.rows() == d.m && tr.ys.cols() == batch.horizon, "save_dataset: trajectory shape mismatch");
    for (Eigen::Index t = 0; t < tr.ys.cols(); ++t) put_doubles(os, tr.ys.col(t).data(), static_cast<std::size_t>(d.m));
  }
  if (!os) throw IoError("failed writing dataset: " + path);
}

TrajectoryBatch load_dataset(const std::string& path) {
  using namespace binio;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kDataMagic)) throw IoError("not a dataset file: " + path);
  if (get<std::uint32_t>(is) != kDataVersion) throw IoError("unsupported dataset version");
  TrajectoryBatch batch;
  auto& d = batch.dist;
  d.n = static_cast<int>(get<std::uint32_t>(is));
  d.m = static_cast<int>(get<std::uint32_t>(is));
  batch.horizon = static_cast<int>(get<std::uint32_t>(is));
  const auto count = get<std::uint32_t>(is);
  d.noise.kind = get<std::uint32_t>(is) == 1 ? NoiseKind::colored : NoiseKind::white;
  d.noise.window = static_cast<int>(get<std::uint32_t>(is));
  batch.seed = get<std::uint64_t>(is);
  d.radius = get<double>(is);
  d.sigma_w2 = get<double>(is);
  d.sigma_v2 = get<double>(is);
  d.noise.sigma_eta2 = get<double>(is);
  d.noise.sigma_nu2 = get<double>(is);
  batch.config_digest = get_string(is);
  (void)get_string(is);  // tool version
  batch.items.resize(count);
  for (Trajectory& tr : batch.items) {
    tr.ys.resize(d.m, batch.horizon);
    for (int t = 0; t < batch.horizon; ++t) get_doubles(is, tr.ys.col(t).data(), static_cast<std::size_t>(d.m));
  }
  return batch;
}

}  // namespace ssmf
