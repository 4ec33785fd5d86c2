export * from "./api.js";
export * from "./series.js";
export * from "./viewmodel.js";
