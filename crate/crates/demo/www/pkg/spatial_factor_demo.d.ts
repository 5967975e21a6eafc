/* tslint:disable */
/* eslint-disable */

export class FitResult {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Posterior mean of the covariate coefficient (truth 0.3).
     */
    beta_mean(): number;
    nu_acceptance(): number;
    posterior_mean(): Float64Array;
    truth(): Float64Array;
}

/**
 * Simulated lattice, row-major per unit.
 */
export class LatticeMaps {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    censored(): Uint8Array;
    /**
     * Observed log(deaths / expected).
     */
    log_smr(): Float64Array;
    /**
     * Observed log(treatment lower bound / expected).
     */
    log_treatment_ratio(): Float64Array;
    /**
     * True latent factor.
     */
    nu(): Float64Array;
}

/**
 * `P(lower <= Y <= lower + 9)` for Poisson means evenly spaced on `(0, max_mean]`.
 */
export function censored_curve(lower: number, max_mean: number, points: number): Float64Array;

/**
 * Simulates a lattice and runs one short chain on it.
 */
export function quick_fit(rows: number, cols: number, iterations: number, seed: bigint): FitResult;

export function simulate_lattice(rows: number, cols: number, tau2: number, seed: bigint): LatticeMaps;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_fitresult_free: (a: number, b: number) => void;
    readonly __wbg_latticemaps_free: (a: number, b: number) => void;
    readonly censored_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly fitresult_beta_mean: (a: number) => number;
    readonly fitresult_nu_acceptance: (a: number) => number;
    readonly fitresult_posterior_mean: (a: number) => [number, number];
    readonly fitresult_truth: (a: number) => [number, number];
    readonly latticemaps_censored: (a: number) => [number, number];
    readonly latticemaps_log_smr: (a: number) => [number, number];
    readonly latticemaps_log_treatment_ratio: (a: number) => [number, number];
    readonly latticemaps_nu: (a: number) => [number, number];
    readonly quick_fit: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly simulate_lattice: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
