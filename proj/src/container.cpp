#include <cstring>
#include <fstream>

#include "json.hpp"
#include "tasked/adapters.hpp"

namespace tasked::data {

namespace {

constexpr char kMagic[4] = {'T', 'S', 'K', 'D'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("dataset container: truncated file");
  return v;
}

}  // namespace

void write_container(const std::filesystem::path& dir, const WindowedDataset& ds) {
  ds.validate();
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "dataset.bin", std::ios::binary);
    if (!os) throw Error("cannot write " + (dir / "dataset.bin").string());
    os.write(kMagic, 4);
    put(os, kVersion);
    put<std::uint64_t>(os, ds.size());
    put<std::uint64_t>(os, ds.channels());
    put<std::uint64_t>(os, ds.window());
    os.write(reinterpret_cast<const char*>(ds.x.ptr()), static_cast<std::streamsize>(ds.x.numel() * sizeof(double)));
    for (int a : ds.activity) put<std::int32_t>(os, a);
    for (int s : ds.subject) put<std::int32_t>(os, s);
  }
  nlohmann::json grouping = nlohmann::json::array();
  for (const SensorGroup& g : ds.grouping)
    grouping.push_back({{"name", g.name}, {"first_channel", g.first_channel}, {"channels", g.channel_count}});
  const nlohmann::json meta = {{"windows", ds.size()},
                               {"channels", ds.channels()},
                               {"window", ds.window()},
                               {"n_activities", ds.n_activities},
                               {"sample_rate", ds.sample_rate},
                               {"grouping", grouping},
                               {"subject_ids", ds.subject_ids},
                               {"subject_source", ds.subject_source},
                               {"source_names", ds.source_names},
                               {"activity_names", ds.activity_names}};
  std::ofstream js(dir / "dataset.json");
  js << meta.dump(2) << "\n";
}

WindowedDataset read_container(const std::filesystem::path& dir) {
  std::ifstream js(dir / "dataset.json");
  if (!js) throw Error("missing " + (dir / "dataset.json").string());
  const nlohmann::json meta = nlohmann::json::parse(js);
  std::ifstream is(dir / "dataset.bin", std::ios::binary);
  if (!is) throw Error("missing " + (dir / "dataset.bin").string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw Error("dataset container: bad magic");
  if (get<std::uint32_t>(is) != kVersion) throw Error("dataset container: unsupported version");
  const auto n = get<std::uint64_t>(is), nc = get<std::uint64_t>(is), w = get<std::uint64_t>(is);
  if (n != meta.at("windows").get<std::uint64_t>() || nc != meta.at("channels").get<std::uint64_t>() ||
      w != meta.at("window").get<std::uint64_t>())
    throw Error("dataset container: binary and sidecar disagree on shape");

  WindowedDataset ds;
  ds.x = Tensor({n, nc, w});
  is.read(reinterpret_cast<char*>(ds.x.ptr()), static_cast<std::streamsize>(ds.x.numel() * sizeof(double)));
  ds.activity.resize(n);
  ds.subject.resize(n);
  for (auto& a : ds.activity) a = get<std::int32_t>(is);
  for (auto& s : ds.subject) s = get<std::int32_t>(is);
  ds.n_activities = meta.at("n_activities");
  ds.sample_rate = meta.at("sample_rate");
  for (const auto& g : meta.at("grouping"))
    ds.grouping.push_back({g.at("name"), g.at("first_channel"), g.at("channels")});
  ds.subject_ids = meta.at("subject_ids").get<std::vector<int>>();
  ds.subject_source = meta.at("subject_source").get<std::vector<int>>();
  ds.source_names = meta.at("source_names").get<std::vector<std::string>>();
  ds.activity_names = meta.at("activity_names").get<std::vector<std::string>>();
  ds.validate();
  return ds;
}

}  // namespace tasked::data
