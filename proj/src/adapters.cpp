#include "tasked/adapters.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace tasked::data {

namespace {

std::vector<std::size_t> range(std::size_t first, std::size_t count) {
  std::vector<std::size_t> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = first + i;
  return v;
}

std::vector<ChannelRef> refs(std::size_t stream, std::size_t first, std::size_t count) {
  std::vector<ChannelRef> v;
  for (std::size_t i = 0; i < count; ++i) v.push_back({stream, first + i});
  return v;
}

std::vector<ChannelRef> join(std::initializer_list<std::vector<ChannelRef>> parts) {
  std::vector<ChannelRef> v;
  for (const auto& p : parts) v.insert(v.end(), p.begin(), p.end());
  return v;
}

// Opportunity body-worn channels (0-based raw columns): 12 accelerometers,
// five IMUs without quaternions, and both shoes.
std::vector<StreamLayout> opportunity_streams() {
  std::vector<StreamLayout> s;
  const char* accs[] = {"RKN^", "HIP", "LUA^", "RUA_", "LH", "BACK_acc", "RKN_", "RWR", "RUA^", "LUA_", "LWR", "RH"};
  for (std::size_t i = 0; i < 12; ++i) s.push_back({accs[i], range(1 + 3 * i, 3)});
  const char* imus[] = {"BACK", "RUA", "RLA", "LUA", "LLA"};
  for (std::size_t i = 0; i < 5; ++i) s.push_back({imus[i], range(37 + 13 * i, 9)});
  s.push_back({"L-SHOE", range(102, 16)});
  s.push_back({"R-SHOE", range(118, 16)});
  return s;
}

Adapter opportunity(bool gestures) {
  Adapter a;
  a.name = gestures ? "opportunity_gestures" : "opportunity_locomotion";
  a.sample_rate = 30.0;
  a.streams = opportunity_streams();
  a.window = 64;
  a.step = 16;
  a.normalization = Normalization::minmax_per_channel;
  // BACK IMU acc; RLA IMU acc/gyro/mag; left shoe body acceleration and body-frame angular velocity.
  a.common_channels = join({refs(12, 0, 3), refs(14, 0, 9), refs(17, 6, 6)});
  if (gestures) {
    a.label_column = 249;
    a.activities = {{0, "Null"},
                    {406516, "Open Door 1"},
                    {406517, "Open Door 2"},
                    {404516, "Close Door 1"},
                    {404517, "Close Door 2"},
                    {406520, "Open Fridge"},
                    {404520, "Close Fridge"},
                    {406505, "Open Dishwasher"},
                    {404505, "Close Dishwasher"},
                    {406519, "Open Drawer 1"},
                    {404519, "Close Drawer 1"},
                    {406511, "Open Drawer 2"},
                    {404511, "Close Drawer 2"},
                    {406508, "Open Drawer 3"},
                    {404508, "Close Drawer 3"},
                    {408512, "Clean Table"},
                    {407521, "Drink from Cup"},
                    {405506, "Toggle Switch"}};
  } else {
    a.label_column = 243;
    a.activities = {{0, "Null"}, {1, "Stand"}, {2, "Walk"}, {4, "Sit"}, {5, "Lie"}};
    a.common_names = {{"Lie", "lying"}, {"Sit", "sitting"}, {"Stand", "standing"}, {"Walk", "walking"}};
  }
  return a;
}

Adapter pamap2() {
  Adapter a;
  a.name = "pamap2";
  a.sample_rate = 100.0;
  // Per IMU: 16g acc, 6g acc, gyro, mag; temperature and orientation dropped.
  a.streams = {{"hand", range(4, 12)}, {"chest", range(21, 12)}, {"ankle", range(38, 12)}};
  a.label_column = 1;
  a.activities = {{1, "lying"},           {2, "sitting"},           {3, "standing"},        {4, "walking"},
                  {5, "running"},         {6, "cycling"},           {7, "Nordic walking"},  {12, "ascending stairs"},
                  {13, "descending stairs"}, {16, "vacuum cleaning"}, {17, "ironing"},       {24, "rope jumping"}};
  a.window = 200;
  a.step = 50;
  a.normalization = Normalization::zscore_per_user;
  a.common_channels = join({refs(1, 0, 3), refs(0, 0, 3), refs(0, 6, 6), refs(2, 0, 3), refs(2, 6, 3)});
  a.common_names = {{"lying", "lying"},     {"sitting", "sitting"},
                    {"standing", "standing"}, {"walking", "walking"},
                    {"running", "running"}, {"cycling", "cycling"},
                    {"ascending stairs", "climbing stairs"}, {"rope jumping", "rope jumping"}};
  return a;
}

Adapter mhealth() {
  Adapter a;
  a.name = "mhealth";
  a.sample_rate = 50.0;
  a.streams = {{"chest", range(0, 3)}, {"ecg", range(3, 2)}, {"left_ankle", range(5, 9)}, {"right_arm", range(14, 9)}};
  a.label_column = 23;
  a.activities = {{1, "standing still"},
                  {2, "sitting and relaxing"},
                  {3, "lying down"},
                  {4, "walking"},
                  {5, "climbing stairs"},
                  {6, "waist bends forward"},
                  {7, "frontal elevation of arms"},
                  {8, "knees bending"},
                  {9, "cycling"},
                  {10, "jogging"},
                  {11, "running"},
                  {12, "jump front and back"}};
  a.window = 200;
  a.step = 50;
  a.normalization = Normalization::zscore_per_user;
  a.common_channels = join({refs(0, 0, 3), refs(3, 0, 9), refs(2, 0, 6)});
  a.common_names = {{"lying down", "lying"},
                    {"sitting and relaxing", "sitting"},
                    {"standing still", "standing"},
                    {"walking", "walking"},
                    {"running", "running"},
                    {"cycling", "cycling"},
                    {"jogging", "jogging"},
                    {"climbing stairs", "climbing stairs"},
                    {"knees bending", "knee bending"},
                    {"jump front and back", "jumping front and back"},
                    {"waist bends forward", "waist bends forward"},
                    {"frontal elevation of arms", "frontal elevation of arms"}};
  return a;
}

Adapter realdisp() {
  Adapter a;
  a.name = "realdisp";
  a.sample_rate = 50.0;
  const char* sensors[] = {"RLA", "RUA", "BACK", "LUA", "LLA", "RC", "RT", "LT", "LC"};
  for (std::size_t i = 0; i < 9; ++i) a.streams.push_back({sensors[i], range(2 + 13 * i, 9)});
  a.label_column = 119;
  const char* names[] = {"Walking",
                         "Jogging",
                         "Running",
                         "Jump up",
                         "Jump front and back",
                         "Jump sideways",
                         "Jump leg/arms open/closed",
                         "Jump rope",
                         "Trunk twist (arms outstretched)",
                         "Trunk twist (elbows bended)",
                         "Waist bends forward",
                         "Waist rotation",
                         "Waist bends (reach foot with opposite hand)",
                         "Reach heels backwards",
                         "Lateral bend",
                         "Lateral bend with arm up",
                         "Repetitive forward stretching",
                         "Upper trunk and lower body opposite twist",
                         "Lateral elevation of arms",
                         "Frontal elevation of arms",
                         "Frontal hand claps",
                         "Frontal crossing of arms",
                         "Shoulders high-amplitude rotation",
                         "Shoulders low-amplitude rotation",
                         "Arms inner rotation",
                         "Knees (alternating) to the breast",
                         "Heels (alternating) to the backside",
                         "Knees bending (crouching)",
                         "Knees (alternating) bending forward",
                         "Rotation on the knees",
                         "Rowing",
                         "Elliptical bike",
                         "Cycling"};
  for (long i = 0; i < 33; ++i) a.activities.push_back({i + 1, names[i]});
  a.window = 120;
  a.step = 60;
  a.normalization = Normalization::zscore_per_user;
  a.common_channels = join({refs(2, 0, 3), refs(0, 0, 9), refs(8, 0, 6)});
  a.common_names = {{"Walking", "walking"},
                    {"Jogging", "jogging"},
                    {"Running", "running"},
                    {"Jump front and back", "jumping front and back"},
                    {"Jump rope", "rope jumping"},
                    {"Waist bends forward", "waist bends forward"},
                    {"Frontal elevation of arms", "frontal elevation of arms"},
                    {"Knees bending (crouching)", "knee bending"},
                    {"Cycling", "cycling"}};
  return a;
}

}  // namespace

std::size_t Adapter::channels() const {
  std::size_t n = 0;
  for (const auto& s : streams) n += s.columns.size();
  return n;
}

DatasetSpec Adapter::default_spec() const {
  DatasetSpec s;
  s.name = name;
  s.window_size = window;
  s.step = step;
  s.normalization = normalization;
  return s;
}

std::vector<std::string> Adapter::activity_names() const {
  std::vector<std::string> v;
  for (const auto& a : activities) v.push_back(a.name);
  return v;
}

const std::vector<Adapter>& adapters() {
  static const std::vector<Adapter> all = {opportunity(false), opportunity(true), pamap2(), mhealth(), realdisp()};
  return all;
}

const Adapter& adapter(const std::string& name) {
  for (const Adapter& a : adapters())
    if (a.name == name) return a;
  std::string known;
  for (const Adapter& a : adapters()) known += (known.empty() ? "" : ", ") + a.name;
  throw Error("unknown dataset adapter '" + name + "' (known: " + known + ")");
}

SensorRecording load_recording(const Adapter& a, const std::filesystem::path& file, int subject_id) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open recording " + file.string());
  std::size_t needed = a.label_column + 1;
  for (const auto& s : a.streams)
    for (std::size_t c : s.columns) needed = std::max(needed, c + 1);

  std::map<long, int> codes;
  for (std::size_t i = 0; i < a.activities.size(); ++i) codes[a.activities[i].code] = static_cast<int>(i);

  std::vector<std::vector<double>> cols(needed);
  std::vector<int> labels;
  std::string line;
  std::vector<double> row;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    row.clear();
    const char* p = line.c_str();
    char* end = nullptr;
    while (true) {
      const double v = std::strtod(p, &end);
      if (end == p) break;
      row.push_back(v);
      p = end;
    }
    if (row.empty()) continue;
    if (row.size() < needed)
      throw Error(file.string() + ":" + std::to_string(line_no) + ": expected at least " + std::to_string(needed) +
                  " columns, found " + std::to_string(row.size()));
    for (std::size_t c = 0; c < needed; ++c) cols[c].push_back(row[c]);
    const double lv = row[a.label_column];
    auto it = std::isnan(lv) ? codes.end() : codes.find(std::lround(lv));
    labels.push_back(it == codes.end() ? kExcludedLabel : it->second);
  }
  if (labels.empty()) throw Error("recording " + file.string() + " is empty");

  SensorRecording rec;
  rec.subject_id = subject_id;
  rec.sample_rate = a.sample_rate;
  rec.n_activities = a.activities.size();
  rec.labels = std::move(labels);
  const std::size_t len = rec.labels.size();
  for (const auto& s : a.streams) {
    Stream st{s.name, Tensor({s.columns.size(), len})};
    for (std::size_t c = 0; c < s.columns.size(); ++c)
      std::copy(cols[s.columns[c]].begin(), cols[s.columns[c]].end(), st.samples.ptr() + c * len);
    rec.streams.push_back(std::move(st));
  }
  rec.validate();
  return rec;
}

std::vector<std::string> vocabulary(const std::string& name) {
  if (name == "common4") return {"lying", "sitting", "standing", "walking"};
  if (name == "common13")
    return {"lying",           "sitting",      "standing",
            "walking",         "running",      "cycling",
            "jogging",         "climbing stairs", "knee bending",
            "jumping front and back", "waist bends forward", "frontal elevation of arms",
            "rope jumping"};
  throw Error("unknown activity vocabulary '" + name + "' (known: common4, common13)");
}

std::map<int, int> vocabulary_map(const Adapter& a, const std::vector<std::string>& vocab) {
  std::map<int, int> m;
  for (const auto& [native, shared] : a.common_names) {
    auto v = std::find(vocab.begin(), vocab.end(), shared);
    if (v == vocab.end()) continue;
    auto n = std::find_if(a.activities.begin(), a.activities.end(),
                          [&](const ActivityCode& c) { return c.name == native; });
    if (n == a.activities.end()) throw Error("adapter " + a.name + ": unknown activity '" + native + "'");
    m[static_cast<int>(n - a.activities.begin())] = static_cast<int>(v - vocab.begin());
  }
  return m;
}

ChannelBounds read_bounds_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open bounds file " + file.string());
  ChannelBounds b;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.rfind("index", 0) == 0) continue;
    std::stringstream ss(line);
    std::string idx, name, lo, hi;
    if (!std::getline(ss, idx, ',') || !std::getline(ss, name, ',') || !std::getline(ss, lo, ',') ||
        !std::getline(ss, hi, ','))
      throw Error(file.string() + ":" + std::to_string(line_no) + ": expected index,name,min,max");
    if (std::stoul(idx) != b.lo.size())
      throw Error(file.string() + ":" + std::to_string(line_no) + ": channel indices must be consecutive");
    b.lo.push_back(std::stod(lo));
    b.hi.push_back(std::stod(hi));
    if (!(b.hi.back() > b.lo.back()))
      throw Error(file.string() + ":" + std::to_string(line_no) + ": max must exceed min");
  }
  return b;
}

std::filesystem::path default_opportunity_bounds() {
#ifdef TASKED_DATA_DIR
  return std::filesystem::path(TASKED_DATA_DIR) / "opportunity_minmax.csv";
#else
  return "data/opportunity_minmax.csv";
#endif
}

}  // namespace tasked::data
