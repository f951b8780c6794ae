/* tslint:disable */
/* eslint-disable */

/**
 * Adam on the Poisson problem, one call per animation frame.
 */
export class PoissonDemo {
    free(): void;
    [Symbol.dispose](): void;
    iterations(): number;
    constructor(strategy: string, lr: number, seed: number);
    /**
     * Network prediction on an `n × n` lattice.
     */
    prediction(n: number): Float64Array;
    /**
     * Relative L2 error against the exact solution on an `n × n` lattice.
     */
    rel_error(n: number): number;
    /**
     * Run `steps` Adam iterations; returns the loss before the last one.
     */
    step(steps: number): number;
}

export function integrate(expr: string, reltol: number, abstol: number, maxiters: number): Float64Array;

export function points(kind: string, n: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_poissondemo_free: (a: number, b: number) => void;
    readonly integrate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly points: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly poissondemo_iterations: (a: number) => number;
    readonly poissondemo_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly poissondemo_prediction: (a: number, b: number) => [number, number, number, number];
    readonly poissondemo_rel_error: (a: number, b: number) => [number, number, number];
    readonly poissondemo_step: (a: number, b: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
