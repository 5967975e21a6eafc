/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_fitresult_free: (a: number, b: number) => void;
export const __wbg_latticemaps_free: (a: number, b: number) => void;
export const censored_curve: (a: number, b: number, c: number) => [number, number, number, number];
export const fitresult_beta_mean: (a: number) => number;
export const fitresult_nu_acceptance: (a: number) => number;
export const fitresult_posterior_mean: (a: number) => [number, number];
export const fitresult_truth: (a: number) => [number, number];
export const latticemaps_censored: (a: number) => [number, number];
export const latticemaps_log_smr: (a: number) => [number, number];
export const latticemaps_log_treatment_ratio: (a: number) => [number, number];
export const latticemaps_nu: (a: number) => [number, number];
export const quick_fit: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const simulate_lattice: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
