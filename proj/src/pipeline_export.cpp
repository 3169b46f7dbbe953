#include "cellvit/export.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cellvit/errors.hpp"
#include "detail/json_writer.hpp"

namespace cellvit {

std::map<std::size_t, std::string> default_class_names() {
    return {{0, "Background"}, {1, "Neoplastic"},    {2, "Inflammatory"},
            {3, "Connective"}, {4, "Dead"},          {5, "Epithelial"},
            {255, "Unknown"}};
}

namespace {

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed: " + path);
}

void emit_coord_pair(detail::JsonWriter& w, double a, double b) {
    w.raw("[");
    w.fixed(a, 4);
    w.raw(",");
    w.fixed(b, 4);
    w.raw("]");
}

} // namespace

std::string result_to_json(const WsiResult& result, bool include_embeddings) {
    detail::JsonWriter w;
    w.raw("{");
    w.key("model");
    w.string(result.params.model_name);
    w.raw(",");
    w.key("mpp");
    w.fixed(result.params.mpp, 4);
    w.raw(",");
    w.key("nuclei");
    w.raw("[");
    for (std::size_t i = 0; i < result.records.size(); ++i) {
        const NucleusRecord& rec = result.records[i];
        if (i) w.raw(",");
        w.raw("{");
        w.key("bbox");
        w.raw("[");
        w.integer(rec.bbox_r0);
        w.raw(",");
        w.integer(rec.bbox_c0);
        w.raw(",");
        w.integer(rec.bbox_r1);
        w.raw(",");
        w.integer(rec.bbox_c1);
        w.raw("],");
        w.key("centroid");
        emit_coord_pair(w, rec.centroid_r, rec.centroid_c);
        w.raw(",");
        w.key("contour");
        w.raw("[");
        for (std::size_t v = 0; v < rec.contour.size(); ++v) {
            if (v) w.raw(",");
            emit_coord_pair(w, static_cast<double>(rec.contour[v].first),
                            static_cast<double>(rec.contour[v].second));
        }
        if (!rec.contour.empty()) { // exported contours are closed
            w.raw(",");
            emit_coord_pair(w, static_cast<double>(rec.contour.front().first),
                            static_cast<double>(rec.contour.front().second));
        }
        w.raw("]");
        if (include_embeddings && !rec.embedding.empty()) {
            w.raw(",");
            w.key("embedding");
            w.raw("[");
            for (std::size_t k = 0; k < rec.embedding.size(); ++k) {
                if (k) w.raw(",");
                w.fixed(rec.embedding[k], 6);
            }
            w.raw("]");
        }
        w.raw(",");
        w.key("id");
        w.integer(static_cast<std::int64_t>(rec.id));
        w.raw(",");
        w.key("type");
        w.integer(static_cast<std::int64_t>(rec.class_id));
        w.raw("}");
    }
    w.raw("],");
    w.key("schema");
    w.string("cellvit-result/1");
    w.raw("}");
    return w.take();
}

void export_json(const WsiResult& result, const std::string& path, bool include_embeddings) {
    write_file(path, result_to_json(result, include_embeddings));
}

WsiResult result_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw IoError(std::string("malformed result JSON: ") + e.what());
    }
    if (j.value("schema", "") != "cellvit-result/1")
        throw IoError("unexpected result schema: " + j.value("schema", "<missing>"));

    WsiResult out;
    out.params.model_name = j.value("model", "");
    out.params.mpp = j.value("mpp", 0.25);
    for (const auto& n : j.at("nuclei")) {
        NucleusRecord rec;
        rec.id = n.at("id").get<std::size_t>();
        rec.class_id = n.at("type").get<std::size_t>();
        const auto& bbox = n.at("bbox");
        rec.bbox_r0 = bbox.at(0).get<std::int64_t>();
        rec.bbox_c0 = bbox.at(1).get<std::int64_t>();
        rec.bbox_r1 = bbox.at(2).get<std::int64_t>();
        rec.bbox_c1 = bbox.at(3).get<std::int64_t>();
        rec.centroid_r = n.at("centroid").at(0).get<double>();
        rec.centroid_c = n.at("centroid").at(1).get<double>();
        for (const auto& v : n.at("contour"))
            rec.contour.emplace_back(static_cast<std::int64_t>(std::llround(v.at(0).get<double>())),
                                     static_cast<std::int64_t>(std::llround(v.at(1).get<double>())));
        if (rec.contour.size() > 1 && rec.contour.front() == rec.contour.back())
            rec.contour.pop_back();
        if (n.contains("embedding"))
            for (const auto& v : n.at("embedding")) rec.embedding.push_back(v.get<float>());
        out.records.push_back(std::move(rec));
    }
    return out;
}

WsiResult import_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open result JSON: " + path);
    return result_from_json(std::string((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>()));
}

std::string result_to_geojson(const WsiResult& result,
                              const std::map<std::size_t, std::string>& class_names) {
    detail::JsonWriter w;
    w.raw("{");
    w.key("features");
    w.raw("[");
    for (std::size_t i = 0; i < result.records.size(); ++i) {
        const NucleusRecord& rec = result.records[i];
        if (i) w.raw(",");
        w.raw("{");
        w.key("geometry");
        w.raw("{");
        w.key("coordinates");
        w.raw("[[");
        // Linear ring in (col, row) order with >= 4 positions, closed.
        std::vector<std::pair<std::int64_t, std::int64_t>> ring = rec.contour;
        while (ring.size() < 3 && !ring.empty()) ring.push_back(ring.back());
        for (std::size_t v = 0; v < ring.size(); ++v) {
            if (v) w.raw(",");
            emit_coord_pair(w, static_cast<double>(ring[v].second),
                            static_cast<double>(ring[v].first));
        }
        if (!ring.empty()) {
            w.raw(",");
            emit_coord_pair(w, static_cast<double>(ring.front().second),
                            static_cast<double>(ring.front().first));
        }
        w.raw("]],");
        w.key("type");
        w.string("Polygon");
        w.raw("},");
        w.key("properties");
        w.raw("{");
        w.key("classification");
        w.raw("{");
        w.key("name");
        const auto it = class_names.find(rec.class_id);
        w.string(it != class_names.end() ? it->second : "Class " + std::to_string(rec.class_id));
        w.raw("}},");
        w.key("type");
        w.string("Feature");
        w.raw("}");
    }
    w.raw("],");
    w.key("type");
    w.string("FeatureCollection");
    w.raw("}");
    return w.take();
}

void export_geojson(const WsiResult& result, const std::string& path,
                    const std::map<std::size_t, std::string>& class_names) {
    write_file(path, result_to_geojson(result, class_names));
}

} // namespace cellvit
